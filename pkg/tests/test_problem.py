import numpy as np
import pytest

from mflq.errors import ValidationError
from mflq.problem import (
    ControlSpec,
    InitialLaw,
    MatrixPath,
    NoiseAffinePath,
    TimeGrid,
    eval_path,
    make_problem,
    nodes_and_midpoints,
    sample_path,
    strip_inhomogeneous,
    validate,
)


def test_grid_basics():
    g = TimeGrid(0.5, 1.5, 4)
    assert g.h == 0.25
    assert g.span == 1.0
    np.testing.assert_allclose(g.nodes, [0.5, 0.75, 1.0, 1.25, 1.5])
    assert g.with_steps(10).n_steps == 10


def test_grid_rejects_bad_spans():
    with pytest.raises(ValidationError):
        TimeGrid(1.0, 1.0, 5)
    with pytest.raises(ValidationError):
        TimeGrid(0.0, 1.0, 0)
    with pytest.raises(ValidationError):
        TimeGrid(0.0, float("inf"), 5)


def test_locate_clamps_roundoff_but_rejects_outside():
    g = TimeGrid(0.0, 1.0, 10)
    assert g.locate(1.0 + 1e-12) == 10.0
    assert g.locate(-1e-12) == 0.0
    with pytest.raises(ValueError):
        g.locate(1.1)


def test_constant_path_evaluates_everywhere():
    p = MatrixPath.constant([[2.0]])
    assert eval_path(p, -5.0)[0, 0] == 2.0
    assert p.is_constant


def test_sampled_path_interpolates_linearly():
    g = TimeGrid(0.0, 1.0, 2)
    p = MatrixPath.sampled(g, np.array([[[0.0]], [[1.0]], [[4.0]]]))
    # node hits are exact, between nodes it is linear
    assert p.at(0.5)[0, 0] == 1.0
    assert p.at(0.25)[0, 0] == 0.5
    assert p.at(0.75)[0, 0] == 2.5
    with pytest.raises(ValueError):
        p.at(2.0)


def test_sample_path_stacks_times():
    g = TimeGrid(0.0, 1.0, 2)
    p = MatrixPath.sampled(g, np.arange(3.0).reshape(3, 1, 1))
    out = sample_path(p, np.array([0.0, 0.5, 1.0]))
    assert out.shape == (3, 1, 1)
    np.testing.assert_allclose(out.ravel(), [0.0, 1.0, 2.0])


def test_nodes_and_midpoints_same_grid_uses_averages():
    g = TimeGrid(0.0, 1.0, 4)
    p = MatrixPath.sampled(g, np.linspace(0, 1, 5).reshape(5, 1, 1))
    node, mid = nodes_and_midpoints(p, g)
    assert node.shape == (5, 1, 1)
    assert mid.shape == (4, 1, 1)
    np.testing.assert_array_equal(mid[:, 0, 0], [0.125, 0.375, 0.625, 0.875])


def test_initial_law_covariance_includes_brownian_variance():
    law = InitialLaw(
        mean=np.array([1.0, 0.0]),
        brownian_load=np.array([2.0, 0.0]),
        indep_load=np.array([[0.0, 0.0], [0.0, 3.0]]),
    )
    cov = law.covariance(0.25)
    np.testing.assert_allclose(cov, [[1.0, 0.0], [0.0, 9.0]])
    sm = law.second_moment(0.25)
    np.testing.assert_allclose(sm, [[2.0, 0.0], [0.0, 9.0]])


def test_deterministic_law_has_zero_covariance():
    law = InitialLaw.deterministic([3.0])
    assert np.all(law.covariance(0.7) == 0.0)


def test_make_problem_accepts_scalars_and_tuples():
    g = TimeGrid(0.0, 1.0, 10)
    p = make_problem(1, 1, g, A=0.5, B=1.0, R=2.0, G=1.0,
                     b=(0.1, 0.2), sigma=(0.0, 0.3, True))
    assert p.A.at(0.3)[0, 0] == 0.5
    assert p.b.const_part.values[0] == 0.1
    assert p.b.noise_part.values[0] == 0.2
    assert p.sigma.frozen_at_start is True
    assert validate(p) == []


def test_make_problem_rejects_unknown_names():
    g = TimeGrid(0.0, 1.0, 10)
    with pytest.raises(ValidationError):
        make_problem(1, 1, g, A=0.0, Z=1.0)


def test_validate_flags_asymmetric_weight():
    g = TimeGrid(0.0, 1.0, 10)
    p = make_problem(2, 1, g, Q=np.array([[1.0, 0.5], [0.0, 1.0]]),
                     R=1.0, G=np.eye(2))
    bad = validate(p)
    assert any("Q" in v and "symmetric" in v for v in bad)


def test_validate_flags_wrong_shape_path():
    import dataclasses

    g = TimeGrid(0.0, 1.0, 10)
    p = make_problem(2, 1, g, R=1.0, G=np.eye(2))
    p = dataclasses.replace(p, B=MatrixPath.constant(np.zeros((3, 1))))
    bad = validate(p)
    assert any(v.startswith("B:") for v in bad)


def test_is_homogeneous_and_strip():
    g = TimeGrid(0.0, 1.0, 10)
    p = make_problem(1, 1, g, R=1.0, G=1.0, b=(0.3, 0.0), g0=[0.2])
    assert not p.is_homogeneous
    core = strip_inhomogeneous(p)
    assert core.is_homogeneous
    # idempotent
    assert strip_inhomogeneous(core).is_homogeneous


def test_has_mean_terms():
    g = TimeGrid(0.0, 1.0, 10)
    p = make_problem(1, 1, g, R=1.0, G=1.0)
    assert not p.has_mean_terms
    q = make_problem(1, 1, g, R=1.0, G=1.0, A_bar=0.1)
    assert q.has_mean_terms


def test_control_spec_mean_control():
    spec = ControlSpec(
        feedback=MatrixPath.constant([[2.0]]),
        mean_feedback=MatrixPath.constant([[-0.5]]),
        offset=NoiseAffinePath.of([0.25], [0.0]),
    )
    u = spec.mean_control(0.0, np.array([2.0]))
    np.testing.assert_allclose(u, [3.25])


def test_paths_are_read_only():
    p = MatrixPath.constant(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        p.values[0, 0] = 1.0
