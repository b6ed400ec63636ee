import pytest

from app.config import load_config, parse_config, resolve_path
from app.errors import ConfigError, CrossSectionError
from app.run_models import RunConfig, SweepConfig
from app.xs_library import format_library, load_library, parse_library

BASIC = """
[run]
mode = diffusion-eigen

[problem]
xs_file = xs.txt
cells = 4
length = 2.0
bc_right = reflective

[solver]
preconditioner = masm
delta = 2
theta = 0.5
"""


def test_parse_basic_config():
    config = parse_config(BASIC, base_dir="/data/case")
    assert config.mode == "diffusion-eigen"
    assert config.problem.n_cells == 4
    assert config.problem.bc_right == "reflective"
    assert config.solver.preconditioner == "masm"
    assert config.solver.delta == 2
    assert config.solver.theta == 0.5
    assert config.solver.restart == 30
    assert config.base_dir == "/data/case"


def test_mode_argument_overrides_run_section():
    assert parse_config(BASIC, mode="transport-eigen").mode == "transport-eigen"


def test_mesh_from_widths_and_materials():
    text = "[problem]\nxs_file = xs.txt\nwidths = 1.0, 2.0 0.5\nmaterials = 0 1 0\n"
    mesh = parse_config(text).problem.mesh()
    assert mesh.widths == [1.0, 2.0, 0.5]
    assert mesh.material == [0, 1, 0]


def test_single_material_fills_mesh():
    mesh = parse_config(BASIC).problem.mesh()
    assert mesh.material == [0, 0, 0, 0]
    assert mesh.widths == [0.5] * 4


def test_bad_value_reports_section_key_line():
    text = BASIC.replace("delta = 2", "delta = -1")
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    error = info.value
    assert (error.section, error.key) == ("solver", "delta")
    assert error.line == text.splitlines().index("delta = -1") + 1
    assert "[solver] delta line" in str(error)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config(BASIC + "smother = sor\n")
    assert (info.value.section, info.value.key) == ("solver", "smother")


def test_unknown_section_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config(BASIC + "\n[output]\nformat = csv\n")
    assert info.value.section == "output"
    assert info.value.line is not None


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config(BASIC + "delta = 3\n")
    assert info.value.key == "delta"


def test_content_before_section():
    with pytest.raises(ConfigError) as info:
        parse_config("mode = nda\n" + BASIC)
    assert info.value.line == 1


def test_problem_required_outside_bench():
    with pytest.raises(ConfigError):
        parse_config("[run]\nmode = nda\n")


def test_bench_needs_no_problem():
    config = parse_config("[run]\nmode = bench\n[bench]\nsize = 65\ncomponents = 2\n")
    assert config.problem is None
    assert config.bench.size == 65
    assert config.bench.components == 2


def test_unknown_mode():
    with pytest.raises(ConfigError) as info:
        parse_config(BASIC.replace("diffusion-eigen", "montecarlo"))
    assert (info.value.section, info.value.key) == ("run", "mode")


def test_inconsistent_geometry():
    text = "[problem]\nxs_file = xs.txt\ncells = 2\nwidths = 1 1 1\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.section == "problem"


def test_odd_quadrature_rejected():
    with pytest.raises(ConfigError):
        parse_config(BASIC.replace("cells = 4", "cells = 4\nquadrature_order = 3"))


def test_sweep_lists_parsed():
    config = parse_config(BASIC + "\n[sweep]\ndelta = 0, 1, 2\nnp1 = 1 2\n")
    assert config.sweep.delta == [0, 1, 2]
    assert config.sweep.np1 == [1, 2]


def test_sweep_points_cartesian_in_field_order():
    points = SweepConfig(delta=[0, 1], np1=[1, 2]).points()
    assert points == [
        {"delta": 0, "np1": 1},
        {"delta": 0, "np1": 2},
        {"delta": 1, "np1": 1},
        {"delta": 1, "np1": 2},
    ]
    assert SweepConfig().points() == [{}]


def test_load_config_reads_file(tmp_path):
    path = tmp_path / "case.ini"
    path.write_text(BASIC)
    config = load_config(path)
    assert config.base_dir == str(tmp_path)
    assert resolve_path(config, "xs.txt") == str(tmp_path / "xs.txt")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_resolve_path_variants():
    s3 = RunConfig(mode="bench", base_dir="s3://bucket/problems/slab/")
    assert resolve_path(s3, "xs.txt") == "s3://bucket/problems/slab/xs.txt"
    assert resolve_path(s3, "s3://other/xs.txt") == "s3://other/xs.txt"
    assert resolve_path(RunConfig(mode="bench"), "xs.txt") == "xs.txt"
    assert resolve_path(RunConfig(mode="bench", base_dir="/a"), "/b/xs.txt") == "/b/xs.txt"


def test_bundled_problems_parse(problems_dir):
    for name in ("infinite_medium", "two_group_slab"):
        config = load_config(problems_dir / name / "problem.ini")
        library = load_library(resolve_path(config, config.problem.xs_file))
        assert library[0].groups == config.problem.groups


LIBRARY = """
# two materials
material 0
sigma_t = 0.3 1.0
sigma_s = 0.25 0.03, 0.0 0.9
nu_sigma_f = 0.005 0.15
chi = 1 0

material 3   # reflector
sigma_t = 0.4 1.2
sigma_s = 0.35 0.05 0.0 1.15
D = 1.1 0.3
"""


def test_parse_library():
    library = parse_library(LIBRARY)
    assert sorted(library) == [0, 3]
    assert library[0].sigma_s == [[0.25, 0.03], [0.0, 0.9]]
    assert library[3].nu_sigma_f == [0.0, 0.0]
    assert library[3].chi == [1.0, 0.0]
    assert list(library[3].diffusion_coefficient) == [1.1, 0.3]


def test_format_library_parses_back():
    library = parse_library(LIBRARY)
    assert parse_library(format_library(library)) == library


@pytest.mark.parametrize(
    "text, message",
    [
        ("sigma_t = 1.0\n", "before the first"),
        ("material 0\nsigma_t = 1.0\nsigma_t = 2.0\n", "given twice"),
        ("material 0\nsigma_t = 1.0\nkappa = 2\n", "unknown key"),
        ("material 0\nsigma_t = 1.0 2.0\nsigma_s = 0.1 0.2 0.3\n", "needs 4 values"),
        ("material 0\nsigma_t = 1.0\nsigma_s = 1.5\n", "exceeds sigma_t"),
        ("material 0\nsigma_t = one\n", "line 2"),
        ("material x\nsigma_t = 1.0\n", "integer"),
        ("material 0\nsigma_t = 1.0\nmaterial 0\nsigma_t = 1.0\n", "defined twice"),
        ("material 0\nsigma_s = 0.5\n", "no sigma_t"),
        ("# nothing\n", "no materials"),
    ],
)
def test_library_errors(text, message):
    with pytest.raises(CrossSectionError, match=message):
        parse_library(text)


def test_load_library_missing(tmp_path):
    with pytest.raises(CrossSectionError):
        load_library(tmp_path / "absent.txt")


def test_bundled_bench_config(problems_dir):
    config = load_config(problems_dir.parent / "configs" / "laplacian_sweep.ini")
    assert config.mode == "bench"
    assert config.bench.components == 4
    assert [p["delta"] for p in config.sweep.points()] == [0, 1, 2]
