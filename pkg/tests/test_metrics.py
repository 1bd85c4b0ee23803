import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpet.data import MotionClip, augment
from vpet.metrics import (
    REPORT_CSV_HEADER,
    AllFramesExcluded,
    EvalReport,
    MetricError,
    OracleCopy,
    diversity,
    evaluate_suite,
    floating_error,
    frame_chamfers,
    pairwise_spread,
    recon_error,
    trajectory_distance,
)

IDENTITY7 = np.array([1.0, 0, 0, 0, 0, 0, 0])


class Shifted:
    """Returns the ground truth moved by a constant translation."""

    def __init__(self, offset):
        self.offset = np.asarray(offset, dtype=float)

    def reconstruct(self, clip):
        g = clip.trajectory()
        g[:, 4:] += self.offset
        return g

    def sample(self, clip, seed):
        return self.reconstruct(clip)


class Noisy:
    """Seeded translation jitter, so every sample differs."""

    def reconstruct(self, clip):
        return clip.trajectory()

    def sample(self, clip, seed):
        g = clip.trajectory()
        g[:, 4:] += np.random.default_rng(seed).normal(scale=0.1, size=g[:, 4:].shape)
        return g


def planar_clip(heights, t=4, tag="walk"):
    """Static limb points above a floor cloud holding their exact footprints."""
    xz = np.random.default_rng(0).uniform(-1, 1, size=(len(heights), 2))
    limb = np.column_stack([xz[:, 0], heights, xz[:, 1]])
    floor = np.column_stack([xz[:, 0], np.zeros(len(heights)), xz[:, 1]])
    return MotionClip(IDENTITY7, np.tile(IDENTITY7, (t, 1)), np.zeros((t + 1, 3)), limb, floor, 0.0, tag)


def test_distance_canonicalises_quaternion_sign():
    a = np.tile(IDENTITY7, (3, 1))
    b = a.copy()
    b[:, :4] *= -1
    assert trajectory_distance(a, b) == 0.0
    with pytest.raises(MetricError):
        trajectory_distance(a, a[:2])


def test_recon_zero_for_copy(small_set):
    assert all(recon_error(OracleCopy(), c) == 0.0 for c in small_set.clips)


def test_constant_offset_matches_elementwise_oracle(small_set):
    clip = small_set.clips[0]
    err = recon_error(Shifted([1.0, 0.0, 0.0]), clip)
    assert err == pytest.approx((clip.t_frames + 1) * 1.0, rel=1e-12)
    gt = clip.trajectory()
    moved = gt.copy()
    moved[:, 4:] += [0.5, -0.25, 2.0]
    assert trajectory_distance(moved, gt) == pytest.approx(np.abs(moved - gt).sum(), rel=1e-12)


def test_diversity_definition(small_set):
    clip = small_set.clips[1]
    model = Noisy()
    s = [model.sample(clip, k) for k in (11, 12)]
    expect = np.mean([trajectory_distance(x, clip.trajectory()) for x in s])
    assert diversity(model, clip, n=2, samples=s) == pytest.approx(expect)
    assert diversity(model, clip, n=4, seed=7) == diversity(model, clip, n=4, seed=7)
    with pytest.raises(MetricError):
        diversity(model, clip, n=1)


def test_z_ignoring_stub_has_zero_spread(small_set):
    clip = small_set.clips[2]
    stub = Shifted([0.0, 0.2, 0.0])
    samples = [stub.sample(clip, k) for k in range(5)]
    assert pairwise_spread(samples) == 0.0
    assert diversity(stub, clip, n=5) == pytest.approx(trajectory_distance(samples[0], clip.trajectory()), rel=1e-12)
    assert pairwise_spread([Noisy().sample(clip, k) for k in range(3)]) > 0


def test_floating_error_planar_oracle():
    heights = np.random.default_rng(1).uniform(0.0, 0.3, 20)
    clip = planar_clip(heights)
    base = floating_error(clip.trajectory(), clip)
    assert base == pytest.approx(heights.mean(), abs=1e-12)
    lifted = clip.trajectory()
    lifted[:, 5] += 1.0
    assert floating_error(lifted, clip) - base == pytest.approx(1.0, abs=1e-12)


def test_floating_error_on_oracle_walks(default_density_set):
    walks = [c for c in default_density_set.clips if c.tag == "walk"]
    assert walks
    assert max(floating_error(c.trajectory(), c) for c in walks) < 0.05


def test_jump_clip_excluded():
    clip = planar_clip(np.full(4, 0.5), tag="jump")
    with pytest.raises(AllFramesExcluded):
        floating_error(clip.trajectory(), clip)
    assert floating_error(clip.trajectory(), clip, exclude_jumps=False) == pytest.approx(0.5)


def test_floating_error_accepts_model(small_set):
    clip = small_set.clips[0]
    assert floating_error(OracleCopy(), clip) == floating_error(clip.trajectory(), clip)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_floating_error_augmentation_invariant(small_set, seed):
    clip = small_set.clips[seed % len(small_set.clips)]
    aug = augment(clip, seed=seed)
    a = frame_chamfers(clip.trajectory(), clip).mean()
    b = frame_chamfers(aug.trajectory(), aug).mean()
    assert abs(a - b) <= 1e-9


def test_suite_with_perfect_model(small_set):
    rep = evaluate_suite(OracleCopy(), small_set.clips, n=3, seed=0)
    assert rep.recon == 0.0 and rep.diversity == 0.0 and rep.spread == 0.0
    assert rep.floating_err == rep.floating_err_gt
    assert rep.n == 3 and rep.clips == len(small_set.clips)


def test_suite_is_deterministic_and_round_trips(tmp_path, small_set):
    clips = small_set.clips[:6]
    a = evaluate_suite(Noisy(), clips, n=3, seed=4, config={"k": 1})
    b = evaluate_suite(Noisy(), clips, n=3, seed=4, config={"k": 1})
    assert a == b
    assert EvalReport.from_json(a.to_json()) == a
    a.write(tmp_path / "r.json", tmp_path / "r.csv")
    rows = (tmp_path / "r.csv").read_text().splitlines()
    assert rows[0] == ",".join(REPORT_CSV_HEADER)
    assert float(rows[1].split(",")[0]) == a.recon
    assert EvalReport.from_json((tmp_path / "r.json").read_text()) == a


def test_recon_independent_of_clip_order(small_set):
    clips = small_set.clips[:6]
    fwd = evaluate_suite(Shifted([0.1, 0, 0]), clips, n=2).recon
    rev = evaluate_suite(Shifted([0.1, 0, 0]), clips[::-1], n=2).recon
    assert fwd == pytest.approx(rev, rel=1e-12)


def test_suite_errors(small_set):
    with pytest.raises(MetricError):
        evaluate_suite(OracleCopy(), [])
    jumps = [c for c in small_set.clips if c.tag == "jump"]
    with pytest.raises(AllFramesExcluded):
        evaluate_suite(OracleCopy(), jumps, n=2)
    assert evaluate_suite(OracleCopy(), jumps, n=2, exclude_jumps=False).floating_err > 0
