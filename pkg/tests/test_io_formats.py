from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reefmap.io_formats import (GRID_LAYERS, ConfigError, FormatError, Grid, bundled_config_path,
                                bundled_configs, grid_from_bytes, grid_to_bytes, parse_config,
                                read_config, read_csv, read_grid, read_rci, write_csv,
                                write_grid, write_pgm16, write_rci)
from reefmap.rangesensor import RangeClassImage


def random_grid(rng, nx=7, ny=5, frac=0.6) -> Grid:
    obs = (rng.random((ny, nx)) < frac).astype(float)
    layers = {name: rng.normal(size=(ny, nx)).astype(np.float32).astype(float)
              for name in GRID_LAYERS if name != "observed"}
    layers["observed"] = obs
    return Grid(nx, ny, 0.05, -1.25, 0.5, layers)


class TestEgrid:
    def test_round_trip_exact(self, rng, tmp_path):
        g = random_grid(rng)
        write_grid(g, tmp_path / "a.egrid")
        back = read_grid(tmp_path / "a.egrid")
        assert (back.cells_x, back.cells_y, back.resolution, back.origin_x, back.origin_y) == (
            7, 5, 0.05, -1.25, 0.5)
        obs = g.observed
        assert np.array_equal(back.observed, obs)
        for name in GRID_LAYERS:
            if name != "observed":
                assert np.array_equal(back.layers[name][obs], g.layers[name][obs])
                assert np.isnan(back.layers[name][~obs]).all()

    def test_float32_precision_bound(self, rng):
        g = random_grid(rng, frac=1.0)
        g.layers["height"] = rng.normal(size=(5, 7)) * 10
        back = grid_from_bytes(grid_to_bytes(g))
        rel = np.abs(back.layers["height"] - g.layers["height"]) / np.abs(g.layers["height"])
        assert rel.max() <= 2.0 ** -24

    def test_all_unobserved(self, tmp_path):
        g = Grid(4, 3, 0.1, 0.0, 0.0)
        write_grid(g, tmp_path / "e.egrid")
        back = read_grid(tmp_path / "e.egrid")
        assert not back.observed.any()

    def test_truncated_names_byte_counts(self, rng):
        data = grid_to_bytes(random_grid(rng))
        with pytest.raises(FormatError, match=r"payload is \d+ bytes, expected 980 for 7x5"):
            grid_from_bytes(data[:-3])

    def test_bad_magic_and_version(self, rng):
        data = grid_to_bytes(random_grid(rng))
        with pytest.raises(FormatError, match="magic"):
            grid_from_bytes(b"XGRID" + data[5:])
        with pytest.raises(FormatError, match="version 2"):
            grid_from_bytes(b"EGRID/2" + data[5:])

    def test_bad_observed_values(self, rng):
        g = random_grid(rng)
        data = bytearray(grid_to_bytes(g))
        data[-4:] = np.float32(0.5).tobytes()
        with pytest.raises(FormatError, match="0/1"):
            grid_from_bytes(bytes(data))

    def test_wrong_layer_shape(self):
        with pytest.raises(FormatError):
            Grid(3, 2, 0.1, 0, 0, {"height": np.zeros((3, 2))})

    @settings(max_examples=200, deadline=None)
    @given(st.binary(max_size=400))
    def test_fuzzed_bytes_only_raise_format_errors(self, blob):
        for data in (blob, b"EGRID 2 2 0.1 0 0\n" + blob, b"EGRID " + blob):
            try:
                grid_from_bytes(data)
            except FormatError:
                pass

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 1100), st.integers(0, 255))
    def test_single_byte_corruption_never_crashes(self, pos, val):
        g = random_grid(np.random.default_rng(0))
        data = bytearray(grid_to_bytes(g))
        pos = pos % len(data)
        data[pos] = val
        try:
            grid_from_bytes(bytes(data))
        except FormatError:
            pass


class TestRci:
    def test_round_trip(self, rng, tmp_path):
        p = rng.random((5, 6, 4))
        p /= p.sum(axis=0, keepdims=True)
        write_rci(RangeClassImage(p), tmp_path / "x.rci")
        back = read_rci(tmp_path / "x.rci")
        assert back.probs.shape == (5, 6, 4)
        assert np.allclose(back.probs, p, atol=1e-6)

    def test_rejects_unnormalised(self, tmp_path):
        p = np.full((5, 2, 2), 0.3)
        (tmp_path / "b.rci").write_bytes(b"RCI 2 2 5\n" + p.astype("<f4").tobytes())
        with pytest.raises(FormatError, match="sum to 1"):
            read_rci(tmp_path / "b.rci")

    def test_truncated(self, tmp_path):
        (tmp_path / "c.rci").write_bytes(b"RCI 2 2 5\n" + bytes(10))
        with pytest.raises(FormatError, match="expected 80"):
            read_rci(tmp_path / "c.rci")


class TestConfig:
    def test_empty_gives_defaults(self):
        cfg = parse_config("")
        assert cfg.map.resolution == 0.02 and cfg.world["kind"] == "flat"
        assert cfg.scheme.representative_ranges == [2.0, 3.0, 4.0, 5.0]

    def test_bad_resolution_names_field_and_line(self):
        with pytest.raises(ConfigError, match=r"line 3: \[map\]\.resolution"):
            parse_config("[map]\nsize_x = 2.0\nresolution = 0\n")
        with pytest.raises(ConfigError, match="resolution"):
            parse_config("[map]\nresolution = -0.1\n")

    def test_non_increasing_ranges(self):
        with pytest.raises(ConfigError, match="strictly increasing"):
            parse_config("[scheme]\nrepresentative_ranges = [2.0, 3.0, 3.0, 5.0]\n")

    def test_unknown_key_and_section(self):
        with pytest.raises(ConfigError, match=r"line 2: \[camera\]\.fov.*unknown key"):
            parse_config("[camera]\nfov = 80\n")
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config("[cameras]\nwidth = 80\n")
        with pytest.raises(ConfigError, match="unknown key for world"):
            parse_config('[world]\nkind = "flat"\ntop = 1.0\n')

    def test_type_errors(self):
        with pytest.raises(ConfigError, match="integer"):
            parse_config("[camera]\nwidth = 12.5\n")
        with pytest.raises(ConfigError, match="true/false"):
            parse_config("[scheme]\nskip_border = 1\n")
        with pytest.raises(ConfigError, match="invalid TOML"):
            parse_config("[map\n")

    def test_epsilon_range(self):
        with pytest.raises(ConfigError, match="epsilon"):
            parse_config("[degradation]\nepsilon = 1.5\n")

    def test_bundled_configs_parse(self):
        names = bundled_configs()
        assert {"default", "sim1_plateau_gap", "sim2_undulating"} <= set(names)
        for n in names:
            cfg = read_config(bundled_config_path(n))
            assert cfg.name == n

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            read_config(tmp_path / "nope.toml")

    def test_digest_tracks_content(self):
        a = parse_config("[map]\nresolution = 0.05\n")
        b = parse_config("[map]\nresolution = 0.05\n")
        assert a.digest() == b.digest()
        assert a.replace_seed(9).digest() != a.digest()


class TestText:
    def test_csv_round_trip(self, tmp_path):
        write_csv(tmp_path / "t.csv", ["a", "b"], [(1, 0.1), (2, float("nan"))])
        head, rows = read_csv(tmp_path / "t.csv")
        assert head == ["a", "b"] and rows == [["1", "0.1"], ["2", "nan"]]

    def test_pgm16(self, tmp_path):
        v = np.array([[0.0, 1.0], [np.nan, 2.25]])
        write_pgm16(tmp_path / "e.pgm", v, 0.0, 2.25)
        data = (tmp_path / "e.pgm").read_bytes()
        assert data.startswith(b"P5\n2 2\n65535\n")
        px = np.frombuffer(data[len(b"P5\n2 2\n65535\n"):], dtype=">u2").reshape(2, 2)
        # bottom grid row is printed first
        assert px[0].tolist() == [0, 65535]
        assert px[1].tolist() == [0, round(65535 / 2.25)]
        assert "2.25" in (tmp_path / "e.txt").read_text()
