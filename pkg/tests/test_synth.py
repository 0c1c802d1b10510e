import numpy as np
import pytest

from mgcnn.pipeline import ingest_csv
from mgcnn.synth import (
    MOVEMENTS,
    SynthConfig,
    day_class,
    generate,
    ground_truth_profile,
    make_topology,
    movement_capacity,
)
from mgcnn.topology import load_topology


def read_all_bytes(paths):
    return b"".join(sorted(p.read_bytes() for p in paths))


def test_generate_deterministic_byte_identical(tmp_path):
    config = SynthConfig(n_intersections=2, days=1, seed=7)
    t1, c1 = generate(config, tmp_path / "a")
    t2, c2 = generate(config, tmp_path / "b")
    assert t1.read_bytes() == t2.read_bytes()
    assert read_all_bytes(c1) == read_all_bytes(c2)


def test_generate_row_counts(tmp_path):
    config = SynthConfig(n_intersections=2, days=2, seed=3)
    _, csvs = generate(config, tmp_path)
    for path in csvs:
        lines = path.read_text().splitlines()
        assert len(lines) == 2 * 1440 + 1  # header plus one row per minute


def test_generator_output_ingests_cleanly_without_outliers(tmp_path):
    import warnings

    config = SynthConfig(n_intersections=2, days=1, seed=5, outlier_rate=0.0)
    topo_path, csvs = generate(config, tmp_path)
    with warnings.catch_warnings():
        warnings.simplefilter("error")  # any warning fails the test
        series = ingest_csv(csvs)
    assert all(s.T == 1440 for s in series)
    load_topology(topo_path).validate()


def test_counts_nonnegative_integers_and_speeds_bounded(tmp_path):
    config = SynthConfig(n_intersections=3, days=1, seed=9, outlier_rate=0.0)
    _, csvs = generate(config, tmp_path)
    series = ingest_csv(csvs)
    from mgcnn.pipeline import RAW_ATTRIBUTES

    for s in series:
        for k, name in enumerate(RAW_ATTRIBUTES):
            col = s.attributes[k]
            if name.startswith("count_"):
                assert np.all(col >= 0)
                assert np.all(col == np.round(col))
            if name.startswith("speed_"):
                assert np.all(col > 0)
                assert np.all(col <= config.free_flow_mph)


def test_peak_volume_exceeds_night_volume_everywhere(tmp_path):
    config = SynthConfig(n_intersections=3, days=2, seed=13, outlier_rate=0.0)
    _, csvs = generate(config, tmp_path)
    series = ingest_csv(csvs)
    from mgcnn.pipeline import RAW_ATTRIBUTES

    eb_t = RAW_ATTRIBUTES.index("count_EB_T")
    for s in series:
        minutes = s.minutes % 1440
        peak = s.attributes[eb_t][(minutes >= 600) & (minutes < 840)]
        night = s.attributes[eb_t][(minutes >= 120) & (minutes < 240)]
        assert peak.mean() > night.mean()


def test_injected_outliers_exceed_iqr_fence(tmp_path):
    base = SynthConfig(n_intersections=2, days=1, seed=21, outlier_rate=0.0)
    spiked = SynthConfig(n_intersections=2, days=1, seed=21, outlier_rate=0.01)
    _, clean_csvs = generate(base, tmp_path / "clean")
    _, spiked_csvs = generate(spiked, tmp_path / "spiked")
    clean = ingest_csv(clean_csvs)
    dirty = ingest_csv(spiked_csvs)
    from mgcnn.pipeline import RAW_ATTRIBUTES

    found = 0
    for s_clean, s_dirty in zip(clean, dirty):
        for k, name in enumerate(RAW_ATTRIBUTES):
            if not name.startswith("count_"):
                continue
            a, b = s_clean.attributes[k], s_dirty.attributes[k]
            injected = np.flatnonzero(a != b)
            if injected.size == 0:
                continue
            q1, q3 = np.percentile(b, [25, 75])
            fence = q3 + 1.5 * (q3 - q1)
            assert np.all(b[injected] > fence)
            found += injected.size
    assert found > 0


def test_ground_truth_profile_cases():
    config = SynthConfig()
    base = config.base_volumes["EB_T"]
    assert ground_truth_profile(config, 300, "EB_T") == base
    assert ground_truth_profile(config, 720, "EB_T") == base * config.morning_multiplier
    assert ground_truth_profile(config, 1100, "EB_T") == base * config.evening_multiplier
    weekend = ground_truth_profile(config, 300, "EB_T", day_cls=0)
    assert weekend == base * config.weekend_factor
    with pytest.raises(ValueError):
        ground_truth_profile(config, 1440, "EB_T")


def test_day_class_pattern():
    assert [day_class(d) for d in range(8)] == [1, 1, 1, 1, 1, 0, 0, 1]


def test_counts_respect_capacity(tmp_path):
    config = SynthConfig(n_intersections=2, days=1, seed=17, outlier_rate=0.0)
    _, csvs = generate(config, tmp_path)
    series = ingest_csv(csvs)
    from mgcnn.pipeline import RAW_ATTRIBUTES

    for s in series:
        for mv in MOVEMENTS:
            cap = movement_capacity(config, mv)
            col = s.attributes[RAW_ATTRIBUTES.index(f"count_{mv}")]
            assert col.max() <= np.round(cap)


def test_make_topology_chain():
    topo = make_topology(SynthConfig(n_intersections=6, seed=2))
    assert topo.n == 6
    assert len(topo.edges) == 10
    topo.validate()
    lo, hi = SynthConfig().link_length_range
    for length in topo.link_length.values():
        assert lo <= length <= hi


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(n_intersections=1).validate()
    with pytest.raises(ValueError):
        SynthConfig(morning_multiplier=0.5).validate()
    with pytest.raises(ValueError):
        SynthConfig(morning_window=(840, 600)).validate()
    with pytest.raises(ValueError):
        SynthConfig(coupling=1.0).validate()
    with pytest.raises(ValueError):
        SynthConfig(base_volumes={"EB_T": 1.0}).validate()
