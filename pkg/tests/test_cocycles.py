import math

import numpy as np
import pytest
import sympy
from fixtures import DataDir

from kzclt.cocycles.evolve import (
    BasePoints,
    CocycleEnsemble,
    DriverSpec,
    burn_in,
    evolve_geodesic,
    geodesic_cf_oracle,
    random_frames,
    sigma_series,
)
from kzclt.cocycles.integer_linalg import (
    integer_kernel,
    is_symplectic,
    pfaffian,
    standard_form,
    symplectic_reduce,
)
from kzclt.cocycles.models import (
    ConstantCocycle,
    SyntheticGaussian,
    TautologicalModel,
    build_model,
    origami_model,
    radial_laplacian_of_radius,
    tautological_model,
)
from kzclt.cocycles.monodromy import (
    MOVE_MATRICES,
    MOVES,
    act_on_marking,
    build_monodromy,
    homology_action,
    monodromy_group,
    tautological_complement,
)
from kzclt.cocycles.origami import (
    builtin_origami,
    canonical_relabeling,
    load_origami,
    origami_build,
    parse_cycles,
)
from kzclt.cocycles.reduction import (
    CocycleState,
    geodesic_word,
    half_plane_point,
    outside_domain,
    reduce_and_accumulate,
    reduction_moves,
)
from kzclt.common.errors import (
    MalformedPermutation,
    NonFinite,
    NotConnected,
    TrivialComplement,
)
from kzclt.hyperbolic.group import GroupElement, diagonal, rotation


@pytest.fixture(scope="module")
def h2():
    return builtin_origami("h2")


@pytest.fixture(scope="module")
def h2_rep(h2):
    return build_monodromy(h2)


@pytest.mark.parametrize(
    "name, genus, stratum",
    [
        ("torus", 1, "H(0)"),
        ("h2", 2, "H(2)"),
        ("eierlegende-wollmilchsau", 3, "H(1,1,1,1)"),
    ],
    ids=["torus", "h2", "ew"],
)
def test_builtin_topology(name, genus, stratum):
    origami = builtin_origami(name)
    assert origami.genus == genus
    assert origami.stratum == stratum
    assert sum(origami.singularities) == 2 * genus - 2
    np.testing.assert_array_equal(origami.form, standard_form(genus))


def test_parse_cycles():
    assert parse_cycles("(1 2 3)", 3) == [2, 3, 1]
    assert parse_cycles("(1,2)(3,4)", 5) == [2, 1, 4, 3, 5]
    assert parse_cycles("", 2) == [1, 2]


def test_origami_from_cycles():
    origami = origami_build(parse_cycles("(1 2 3)", 3), parse_cycles("(1 2)", 3))
    assert origami.genus == 2
    assert origami.to_dict() == {"name": "", "n": 3, "h": [2, 3, 1], "v": [2, 1, 3]}


def test_disconnected_origami():
    with pytest.raises(NotConnected):
        origami_build([1, 2], [1, 2])


def test_malformed_origami_files():
    data_dir = DataDir("test_malformed_origami_files")

    repeated = data_dir.create_json("repeated.json", {"n": 2, "h": [1, 1], "v": [1, 2]})
    with pytest.raises(MalformedPermutation) as error:
        load_origami(repeated)
    assert error.value.field == "h"
    assert error.value.line == 3

    short = data_dir.create_json("short.json", {"n": 3, "h": [1, 2, 3], "v": [1, 2]})
    with pytest.raises(MalformedPermutation) as error:
        load_origami(short)
    assert error.value.field == "v"

    missing = data_dir.create_json("missing.json", {"n": 1, "h": [1]})
    with pytest.raises(MalformedPermutation) as error:
        load_origami(missing)
    assert error.value.field == "v"

    broken = data_dir.create_file("broken.json", '{"n": 1,\n "h": [1')
    with pytest.raises(MalformedPermutation) as error:
        load_origami(broken)
    assert error.value.line == 2


def test_canonical_relabeling_forgets_names(h2):
    relabel = (2, 0, 1)
    h = [0] * 3
    v = [0] * 3
    for i in range(3):
        h[relabel[i]] = relabel[h2.h[i]]
        v[relabel[i]] = relabel[h2.v[i]]
    assert canonical_relabeling(tuple(h), tuple(v))[0] == canonical_relabeling(h2.h, h2.v)[0]


def test_symplectic_reduce_and_kernel():
    form = standard_form(2)
    # A unimodular change of basis of the standard lattice.
    vectors = np.array([[1, 1, 0, 0], [0, 1, 0, 0], [0, 0, 1, 2], [0, 0, 0, 1]])
    basis = symplectic_reduce(vectors, form)
    np.testing.assert_array_equal(basis @ form @ basis.T, form)
    assert pfaffian(form) == 1

    kernel, left = integer_kernel(np.array([[1, 0, 1, 0], [0, 1, 0, 1]]))
    assert kernel.shape == (4, 2)
    np.testing.assert_array_equal(np.array([[1, 0, 1, 0], [0, 1, 0, 1]]) @ kernel, 0)
    np.testing.assert_array_equal(left @ kernel, np.eye(2, dtype=np.int64))


def test_homology_action_on_the_torus():
    torus = builtin_origami("torus")
    matrix, marking = homology_action(torus, "T")
    assert marking == (torus.h, torus.v)
    assert np.trace(matrix) == 2
    assert round(np.linalg.det(matrix)) == 1
    assert not np.array_equal(matrix, np.eye(2, dtype=np.int64))

    with pytest.raises(ValueError):
        homology_action(torus, "U")


@pytest.mark.parametrize("name", ["torus", "h2"])
def test_four_quarter_turns_are_the_identity(name):
    rep = build_monodromy(builtin_origami(name))
    product, marking = rep.word(["S"] * 4)
    assert marking == 0
    np.testing.assert_array_equal(product, np.eye(rep.dimension, dtype=np.int64))


def test_homology_action_lands_on_the_image_marking(h2, h2_rep):
    form = standard_form(h2.genus)
    for move in MOVES:
        matrix, marking = homology_action(h2, move, h2_rep)
        np.testing.assert_array_equal(matrix.T @ form @ matrix, form)
        assert marking == act_on_marking(move, (h2.h, h2.v))


def test_monodromy_is_symplectic(h2, h2_rep):
    form = standard_form(h2.genus)
    for move in MOVES:
        for marking in range(h2_rep.size):
            assert is_symplectic(h2_rep.matrix(move, marking), form)


@pytest.mark.parametrize("word", [["T", "Tinv"], ["S", "Sinv"], ["Tinv", "T"]])
def test_inverse_moves_cancel(h2_rep, word):
    for marking in range(h2_rep.size):
        product, end = h2_rep.word(word, marking)
        assert end == marking
        np.testing.assert_array_equal(product, np.eye(h2_rep.dimension, dtype=np.int64))


def test_complement_of_h2(h2, h2_rep):
    complement = tautological_complement(h2, h2_rep)
    assert complement.rep.dimension == 2
    for frame, kernel, left, form in zip(
        h2_rep.frames, complement.kernels, complement.left_inverses, complement.rep.forms
    ):
        np.testing.assert_array_equal(frame.projection @ kernel, 0)
        np.testing.assert_array_equal(left @ kernel, np.eye(2, dtype=np.int64))
        assert pfaffian(form) > 0


def test_torus_has_no_complement():
    with pytest.raises(TrivialComplement):
        tautological_complement(builtin_origami("torus"))


def test_h2_complement_group_is_infinite(h2, h2_rep):
    closure = monodromy_group(tautological_complement(h2, h2_rep).rep, max_elements=2000)
    assert not closure.finite
    assert closure.order is None


def test_ew_complement_group_is_finite():
    ew = builtin_origami("eierlegende-wollmilchsau")
    closure = monodromy_group(tautological_complement(ew).rep)
    assert closure.finite
    assert closure.order >= 1


def test_reduction_lands_in_the_domain():
    rng = np.random.default_rng(4)
    for _ in range(50):
        frame = rotation(rng.uniform(0, 4 * math.pi)) @ diagonal(rng.uniform(0, 4))
        moves, reduced = reduction_moves((frame.a, frame.b, frame.c, frame.d))
        x, y = half_plane_point(*reduced)
        assert -0.5 <= x < 0.5
        assert x * x + y * y >= 1 - 1e-12
        assert not outside_domain(*reduced)

        product = np.eye(2)
        for move in moves:
            product = np.array(MOVE_MATRICES[move]) @ product
        np.testing.assert_allclose(product @ frame.matrix(), np.reshape(reduced, (2, 2)))


def test_cocycle_state_accumulates_exactly():
    rep = ConstantCocycle(np.array([[1, 1], [0, 1]])).rep
    state = CocycleState.start(rep, GroupElement(1.0, 5.0, 0.0, 1.0))
    assert state.word_length == 5
    assert state.point == pytest.approx(1j)
    np.testing.assert_array_equal(state.matrix.astype(np.int64), [[1, 5], [0, 1]])


def test_reduce_and_accumulate(h2_rep):
    frame = GroupElement(1.0, 0.45, 0.0, 1.0) @ diagonal(0.3)
    state = CocycleState.start(h2_rep, frame)
    assert state.word_length == 0

    inside = reduce_and_accumulate(state, diagonal(0.1), h2_rep)
    assert inside.word_length == 0
    assert inside.marking == state.marking
    np.testing.assert_array_equal(inside.matrix, state.matrix)

    # Pushes Re z past 1/2, then back.
    crossed = reduce_and_accumulate(state, GroupElement(1.0, 0.1, 0.0, 1.0), h2_rep)
    assert crossed.last_move == "Tinv"
    back = reduce_and_accumulate(crossed, GroupElement(1.0, -0.1, 0.0, 1.0), h2_rep)
    assert back.word_length == 2
    assert back.marking == state.marking
    np.testing.assert_array_equal(back.matrix.astype(np.int64), state.matrix.astype(np.int64))
    assert back.point.real == pytest.approx(0.45)


def test_geodesic_word_follows_markings(h2_rep):
    word, frame, marking = geodesic_word(h2_rep, GroupElement(1.0, 0.0, 0.0, 1.0), 0, 1.0, 20.0)
    assert word
    current = 0
    for move, source in word:
        assert source == current
        current = h2_rep.target(move, source)
    assert current == marking
    assert not outside_domain(frame.a, frame.b, frame.c, frame.d)


def test_radial_laplacian_of_the_radius():
    expression = radial_laplacian_of_radius()
    (t,) = expression.free_symbols
    assert sympy.simplify((expression - 2 * sympy.coth(2 * t)).rewrite(sympy.exp)) == 0
    assert float(expression.subs(t, 0.7)) == pytest.approx(2 / math.tanh(1.4))


def test_build_model():
    assert isinstance(build_model("tautological"), TautologicalModel)
    assert isinstance(tautological_model(), TautologicalModel)
    synthetic = build_model("synthetic", variance=2.0, exponent=0.5)
    assert isinstance(synthetic, SyntheticGaussian)
    assert synthetic.describe() == {"kind": "synthetic", "variance": 2.0, "exponent": 0.5}

    model = build_model("origami", origami="h2", subspace="complement")
    assert model.dimension == 2
    assert model.describe()["stratum"] == "H(2)"

    with pytest.raises(ValueError):
        build_model("origami")
    with pytest.raises(ValueError):
        build_model("hodge")
    with pytest.raises(ValueError):
        origami_model(builtin_origami("h2"), subspace="half")
    with pytest.raises(ValueError):
        SyntheticGaussian(-1.0)


def test_random_frames_are_orthonormal():
    frames = random_frames(0, range(5), 4, 2)
    for frame in frames:
        np.testing.assert_allclose(frame.T @ frame, np.eye(2), atol=1e-12)
    np.testing.assert_array_equal(random_frames(0, [3], 4, 2)[0], frames[3])


def test_burn_in_reduces_base_points(h2):
    model = origami_model(h2)
    base = burn_in(model, 4, duration=2.0, dt=1e-2, seed=1)
    a, b, c, d = base.frames
    np.testing.assert_allclose(a * d - b * c, 1.0)
    assert not outside_domain(a, b, c, d).any()
    assert np.all(base.markings < model.rep.size)

    untouched = burn_in(TautologicalModel(), 4, duration=2.0, dt=1e-2, seed=1)
    np.testing.assert_array_equal(untouched.frames[0], 1.0)


def test_top_wedge_of_a_symplectic_cocycle_does_not_grow(h2):
    model = origami_model(h2)
    thetas = np.array([0.3, 1.7, 4.1])
    evolution = evolve_geodesic(
        model, BasePoints.identity(3), thetas, 20.0, random_frames(0, range(3), 4, 4)
    )
    np.testing.assert_allclose(evolution.sigma, 0.0, atol=1e-8)

    vectors = random_frames(0, range(3), 4, 1)
    top = evolve_geodesic(model, BasePoints.identity(3), thetas, 20.0, vectors, [10.0, 20.0])
    assert np.all(top.sigma[:, 1] > top.sigma[:, 0])


def test_tautological_sigma_series():
    times, sigma = sigma_series(TautologicalModel(), DriverSpec("geodesic"), None, 10.0, 1.0)
    np.testing.assert_array_equal(times, sigma)
    assert len(times) == 11


@pytest.mark.parametrize("theta", [1.0, 2.0, 4.0])
def test_continued_fraction_growth(theta):
    growth = geodesic_cf_oracle(theta, 30.0)
    assert len(growth.partial_quotients) > 5
    assert all(a >= 1 for a in growth.partial_quotients[1:])
    assert 0.75 <= growth.slope <= 1.25


def test_unknown_driver():
    with pytest.raises(ValueError):
        DriverSpec("teichmuller")


def test_ensemble_rejects_non_finite_frames(h2):
    ensemble = CocycleEnsemble(origami_model(h2), BasePoints.identity(3))
    with pytest.raises(NonFinite):
        ensemble.multiply_symmetric(np.array([1.0, math.nan, 1.0]), 0.0, 1.0)


@pytest.mark.slow
def test_long_burn_in_stays_finite(h2):
    model = origami_model(h2, subspace="complement")
    base = burn_in(model, 200, duration=200.0, dt=1e-2, seed=0)
    a, b, c, d = base.frames
    for entry in base.frames:
        assert np.all(np.isfinite(entry))
    np.testing.assert_allclose(a * d - b * c, 1.0, rtol=1e-9)
    assert not outside_domain(a, b, c, d).any()


@pytest.mark.slow
def test_ew_sigma_stays_bounded():
    model = origami_model(builtin_origami("eierlegende-wollmilchsau"), subspace="complement")
    v = random_frames(0, [0], model.dimension, 1)[0]
    # 10⁵ geodesic steps.
    times, sigma = sigma_series(model, DriverSpec("geodesic", theta=1.0), v, 1e4, 100.0)
    assert len(times) == 101
    assert np.all(np.isfinite(sigma))
    assert np.max(np.abs(sigma)) <= 10
