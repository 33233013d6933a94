"""Acceptance gate: ten end-to-end criteria, one verdict line each.

Every test prints a single "[criterion NN] PASS/FAIL - ..." line with the
measured values (visible even under capture) and then asserts. Tolerances
are pinned inline; "exact" means integer- or bit-exact. The last criterion
trains a small model from scratch, so the full file takes roughly a quarter
hour on one CPU core.
"""

import math
import time
from fractions import Fraction

import numpy as np

from edt.amm import GridGeometry, build_amm, distance_matrix, modulate
from edt.architecture import (
    EdtBlock,
    EdtModel,
    ModelConfig,
    attach_amm,
    detach_amm,
    edt_s_config,
)
from edt.diffusion import (
    GuidanceConfig,
    NoiseSchedule,
    SamplerConfig,
    cfg_predict,
    ddim_sample,
    forward_diffuse,
)
from edt.flops import (
    BlockShape,
    DownsampleDesign,
    block_flops,
    block_params,
    conventional_drop_ratio,
    model_flops,
    redesigned_drop_ratio,
)
from edt.harness import (
    DatasetSpec,
    RunConfig,
    SyntheticDataset,
    evaluate,
    kernel_mmd,
    read_loss_log,
    sample_from_checkpoint,
    train,
)
from edt.masking import MaskGrid, sample_mask
from edt.numerics import OpCounter, Rng, Tensor, counting, mse, no_grad


def _verdict(capsys, num, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {num:02d}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num:02d}: {detail}"


def _toy_config(**overrides):
    base = dict(
        patch_size=2,
        stage_blocks=(1, 1, 1, 1, 1),
        stage_dims=(8, 12, 16, 12, 8),
        stage_heads=(2, 2, 4, 2, 2),
        class_count=4,
        latent_channels=4,
        grid_side=8,
    )
    base.update(overrides)
    return ModelConfig(**base)


def test_criterion_01_modulation_matrix_properties(capsys):
    # N in {2, 4, 8, 16}, default scale 0.5 and radius sqrt((N-1)^2 + 4):
    # symmetric, diagonal exactly e/2, nonzero entries within [1/2, e/2],
    # strictly decreasing with distance inside the radius, zero outside.
    t0 = time.perf_counter()
    ok = True
    for side in (2, 4, 8, 16):
        m = build_amm(GridGeometry(side))
        e = m.entries
        d = distance_matrix(m.grid)
        inside = d <= m.params.radius
        ok &= np.array_equal(e, e.T)
        ok &= bool(np.all(np.diag(e) == 0.5 * math.e))
        ok &= e[inside].min() >= 0.5 and e[inside].max() <= 0.5 * math.e
        ok &= bool(np.all(e[~inside] == 0.0))
        order = np.argsort(d[inside])
        step_d = np.diff(d[inside][order])
        step_v = np.diff(e[inside][order])
        ok &= bool(np.all(np.where(step_d > 0, step_v < 0, step_v == 0)))
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 1.0
    _verdict(
        capsys, 1, ok,
        f"symmetry, e/2 diagonal, [1/2, e/2] range, radial monotonicity, "
        f"zeros outside R for N in (2,4,8,16); {elapsed * 1e3:.0f} ms (< 1 s)",
    )


def test_criterion_02_modulation_cost(capsys):
    # one Hadamard pass over an 18-head 256x256 score tensor: 1,179,648 MACs
    matrix = build_amm(GridGeometry(16))
    scores = np.full((18, 256, 256), 1.0 / 256)
    counter = OpCounter()
    with counting(counter):
        modulate(scores, matrix)
    ok = counter.mac_count == 1_179_648
    _verdict(
        capsys, 2, ok,
        f"modulating 18x256x256 scores adds {counter.mac_count} MACs "
        f"(1179648 expected, exact)",
    )


def test_criterion_03_block_cost_formula_matches_instrumentation(capsys):
    # 20 seeded-random (n, d): the closed form 2n^2 d + 12nd^2 + 6d^2 equals
    # the counted MACs of a real block forward, and 18d^2 equals the built
    # parameter count, both exactly
    t0 = time.perf_counter()
    rng = Rng(0)
    ok = True
    for trial in range(20):
        n = int(rng.integers(4, 65))
        d = int(rng.integers(8, 65))
        divisors = [h for h in range(1, d + 1) if d % h == 0]
        heads = divisors[int(rng.integers(0, len(divisors)))]
        params = {}
        block = EdtBlock(params, Rng(trial), "b", d, heads, np.float64, zero_gates=False)
        counted = sum(t.data.size for t in params.values())
        x = Tensor(Rng(trial + 100).normal((1, n, d)))
        c = Tensor(Rng(trial + 200).normal((1, d)))
        counter = OpCounter()
        with counting(counter), no_grad():
            block(x, c)
        ok &= counter.mac_count == block_flops(BlockShape(n, d))
        ok &= counted == block_params(d)
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 60.0
    _verdict(
        capsys, 3, ok,
        f"20 random blocks, n in [4,64], d in [8,64]: analytic MACs == counted "
        f"MACs and 18d^2 == built parameters, all exact; {elapsed:.1f} s (< 60 s)",
    )


def test_criterion_04_drop_ratio_bounds(capsys):
    t0 = time.perf_counter()
    # conventional step (tokens/4, dim x2): rho < 7j/(8j+48) on j = 1..10
    conv_ok = True
    for j in range(1, 11):
        drop = conventional_drop_ratio(BlockShape(48 * j, 48))
        conv_ok &= drop.holds and drop.value < Fraction(7 * j, 8 * j + 48)
    # redesigned step (tokens/4, dim x r): rho > 1 - 0.4375 r for j >= 1
    red_ok = True
    for tenths in range(11, 20):
        design = DownsampleDesign(Fraction(tenths, 10))
        floor = 1 - Fraction(7, 16) * design.r
        for j in range(1, 11):
            drop = redesigned_drop_ratio(BlockShape(40 * j, 40), design)
            red_ok &= drop.holds and drop.bound_applicable and drop.value > floor
    # quoted operating point: conventional rho at j = 1, d = 1024
    point = float(conventional_drop_ratio(BlockShape(1024, 1024)).value)
    point_ok = abs(point - 0.125) <= 0.005
    elapsed = time.perf_counter() - t0
    ok = conv_ok and red_ok and point_ok and elapsed < 1.0
    _verdict(
        capsys, 4, ok,
        f"rho < 7j/(8j+48) on j=1..10, rho > 1-0.4375r on r=1.1..1.9 x j=1..10 "
        f"(exact rationals), rho(j=1, d=1024) = {point:.5f} within 0.125 +/- 0.005; "
        f"{elapsed * 1e3:.0f} ms (< 1 s)",
    )


def test_criterion_05_small_variant_accounting(capsys):
    # bias-free blocks at (312, 416, 520, 416, 312): totals must stay within
    # 15% of the published 32.2M block parameters / 2.66G forward MACs
    report = model_flops(edt_s_config())
    params_rel = (report.block_params_total - 32_200_000) / 32_200_000
    flops_rel = (report.total_flops - 2_660_000_000) / 2_660_000_000
    frozen = (
        report.block_params_total == 34_070_400
        and report.total_flops == 2_667_799_680
    )
    ok = frozen and abs(params_rel) <= 0.15 and abs(flops_rel) <= 0.15
    _verdict(
        capsys, 5, ok,
        f"block params {report.block_params_total} ({params_rel:+.1%} vs 32.2M), "
        f"forward MACs {report.total_flops} ({flops_rel:+.1%} vs 2.66G), "
        f"both within +/-15%",
    )


def test_criterion_06_architecture_invariants(capsys):
    t0 = time.perf_counter()
    x = Rng(9).normal((2, 4, 16, 16)).astype(np.float32)
    t = np.array([500, 3])
    y = np.array([1, 2])

    # zero-gated model: blocks are identities, the head emits exact zeros
    frozen = EdtModel(_toy_config(), seed=5)
    trace = {}
    with no_grad():
        out = frozen.forward(x, t, y, trace=trace)
    shape_ok = out.shape == x.shape
    n0 = frozen.config.grid_side ** 2
    quarter_ok = (
        trace["down0"].shape[1] == n0 // 4
        and trace["down1"].shape[1] == n0 // 16
        and trace["up0"].shape[1] == n0 // 4
        and trace["up1"].shape[1] == n0
    )
    identity_ok = (
        np.array_equal(trace["stage0"], trace["patchify"])
        and np.array_equal(trace["stage1"], trace["down0"])
        and np.array_equal(trace["stage2"], trace["down1"])
        and np.array_equal(trace["stage3"], trace["skip0"])
        and np.array_equal(trace["stage4"], trace["skip1"])
    )
    zero_ok = bool(np.all(trace["output"] == 0.0))

    # live model: attaching modulation creates no parameters, changes the
    # forward pass, and detaching restores it bit-exactly
    live = EdtModel(_toy_config(), seed=7, zero_gates=False)
    before = {k: v.copy() for k, v in live.state_arrays().items()}
    with no_grad():
        base = np.array(live.forward(x, t, y).data, copy=True)
    attach_amm(live)
    after = live.state_arrays()
    params_ok = set(before) == set(after) and all(
        np.array_equal(before[k], after[k]) for k in before
    )
    with no_grad():
        modulated = live.forward(x, t, y).data
    changed_ok = live.amm_attached() and not np.array_equal(modulated, base)
    detach_amm(live)
    with no_grad():
        restored = live.forward(x, t, y).data
    revert_ok = not live.amm_attached() and np.array_equal(restored, base)

    elapsed = time.perf_counter() - t0
    ok = (
        shape_ok and quarter_ok and identity_ok and zero_ok
        and params_ok and changed_ok and revert_ok and elapsed < 60.0
    )
    _verdict(
        capsys, 6, ok,
        f"shape law, /4 token halvings, block identity at init, zero output at "
        f"init, attach/detach parameter-neutral and bit-reversible; "
        f"{elapsed:.1f} s (< 60 s)",
    )


def test_criterion_07_gradients_match_finite_differences(capsys):
    # 2-block toy at float64 with every masking path active: analytic
    # gradients vs central differences (h = 1e-5) over all 11,212 parameters
    t0 = time.perf_counter()
    cfg = _toy_config(
        stage_blocks=(1, 0, 1, 0, 0),
        stage_dims=(4, 8, 12, 8, 4),
        class_count=2,
    )
    model = EdtModel(cfg, seed=3, dtype=np.float64, zero_gates=False)
    rng = Rng(17)
    x = rng.normal((2, 4, 16, 16))
    eps = Tensor(rng.normal((2, 4, 16, 16)))
    t = np.array([411, 77])
    y = np.array([1, 0])
    side1, side2 = model.down_grid_sides
    f1 = np.zeros(side1 * side1, dtype=bool)
    f1[rng.choice(side1 * side1, size=7, replace=False)] = True
    g1 = MaskGrid(flags=f1, grid_side=side1, ratio=7 / 16)
    f2 = np.zeros(side2 * side2, dtype=bool)
    f2[rng.choice(side2 * side2, size=1, replace=False)] = True
    g2 = MaskGrid(flags=f2, grid_side=side2, ratio=1 / 4)
    fi = np.zeros(64, dtype=bool)
    fi[rng.choice(64, size=16, replace=False)] = True
    gi = MaskGrid(flags=fi, grid_side=8, ratio=1 / 4)

    def loss_value():
        out = model.forward(x, t, y, mask_grids=(g1, g2), input_mask=gi)
        return mse(out, eps)

    loss = loss_value()
    loss.backward()
    connected = all(p.grad is not None for p in model.params.values())

    h = 1e-5
    worst = (0.0, "")
    for name, p in model.params.items():
        flat = p.data.ravel()
        fd = np.zeros(flat.size)
        for i in range(flat.size):
            v = flat[i]
            flat[i] = v + h
            with no_grad():
                f_plus = float(loss_value().data)
            flat[i] = v - h
            with no_grad():
                f_minus = float(loss_value().data)
            flat[i] = v
            fd[i] = (f_plus - f_minus) / (2 * h)
        a = p.grad.ravel()
        denom = max(np.abs(a).max(), np.abs(fd).max(), 1e-12)
        rel = np.abs(a - fd).max() / denom
        if rel > worst[0]:
            worst = (rel, name)
    elapsed = time.perf_counter() - t0
    ok = connected and worst[0] <= 1e-5 and elapsed < 300.0
    _verdict(
        capsys, 7, ok,
        f"{model.parameter_count()} parameters in {len(model.params)} tensors, "
        f"all with gradients; max rel err {worst[0]:.2e} ({worst[1]}) <= 1e-5; "
        f"{elapsed:.0f} s (< 300 s)",
    )


def test_criterion_08_masking_isolation(capsys):
    # substituted positions must hide their original content from everything
    # downstream, and realized mask fractions must stay inside the configured
    # ranges; grid 16 makes both default ranges feasible (64- and 16-token
    # post-merge grids)
    cfg = _toy_config(grid_side=16)
    model = EdtModel(cfg, seed=2, zero_gates=False)
    spec = cfg.mask
    side1, side2 = model.down_grid_sides
    rng = Rng(spec.seed)
    g1 = sample_mask(side1, spec.stage1_ratio_range, rng)
    g2 = sample_mask(side2, spec.stage2_ratio_range, rng)
    frac1 = g1.masked_count / side1 ** 2
    frac2 = g2.masked_count / side2 ** 2
    used_ok = 0.4 <= frac1 <= 0.5 and 0.1 <= frac2 <= 0.2

    x = Rng(1).normal((2, 4, 32, 32)).astype(np.float32)
    t = np.array([700, 41])
    y = np.array([0, 3])
    clean, hooked = {}, {}
    with no_grad():
        model.forward(x, t, y, mask_grids=(g1, g2), trace=clean)

    corrupt = Rng(99)

    def scramble(z, grid):
        z[:, grid.flags, :] = corrupt.normal(
            z[:, grid.flags, :].shape
        ).astype(z.dtype)
        return z

    model.down0.premask_hook = scramble
    model.down1.premask_hook = scramble
    with no_grad():
        model.forward(x, t, y, mask_grids=(g1, g2), trace=hooked)
    iso_ok = set(clean) == set(hooked) and all(
        np.array_equal(clean[k], hooked[k]) for k in clean
    )

    # control: the same corruption on an unmasked position must be visible,
    # otherwise the isolation check proves nothing
    def bump_unmasked(z, grid):
        z[:, int(np.flatnonzero(~grid.flags)[0]), :] += 1.0
        return z

    model.down0.premask_hook = bump_unmasked
    model.down1.premask_hook = None
    control = {}
    with no_grad():
        model.forward(x, t, y, mask_grids=(g1, g2), trace=control)
    model.down0.premask_hook = None
    control_ok = not np.array_equal(control["output"], clean["output"])

    draws_ok = True
    rng2 = Rng(123)
    for _ in range(2000):
        m1 = sample_mask(side1, spec.stage1_ratio_range, rng2)
        m2 = sample_mask(side2, spec.stage2_ratio_range, rng2)
        draws_ok &= 0.4 <= m1.masked_count / 64 <= 0.5
        draws_ok &= 0.1 <= m2.masked_count / 16 <= 0.2

    ok = used_ok and iso_ok and control_ok and draws_ok
    _verdict(
        capsys, 8, ok,
        f"masked-content scrambling invisible in every traced activation, "
        f"unmasked control visible; fractions {frac1:.3f}/{frac2:.3f} and 2000 "
        f"draws inside [0.4,0.5]/[0.1,0.2]",
    )


def test_criterion_09_diffusion_statistics(capsys):
    # forward process statistics over 1e4 draws, 3 sigma
    sched = NoiseSchedule.linear()
    draws = 10_000
    t_step = 600
    ab = float(sched.alpha_bar(t_step))
    x0 = np.full((draws, 1, 1, 1), 1.7)
    eps = Rng(4).normal((draws, 1, 1, 1))
    x_t = forward_diffuse(x0, np.full(draws, t_step), eps, sched).ravel()
    sd = math.sqrt(1.0 - ab)
    mean_err = abs(x_t.mean() - math.sqrt(ab) * 1.7)
    mean_tol = 3 * sd / math.sqrt(draws)
    std_err = abs(x_t.std(ddof=1) - sd)
    std_tol = 3 * sd / math.sqrt(2 * (draws - 1))
    stats_ok = mean_err < mean_tol and std_err < std_tol

    # guidance weight 1 must return the conditional branch bit-for-bit
    model = EdtModel(_toy_config(), seed=11, zero_gates=False)
    x = Rng(6).normal((3, 4, 16, 16)).astype(np.float32)
    y = np.array([0, 2, 3])
    guided = cfg_predict(
        model, x, 500, y,
        GuidanceConfig(omega=1.0, null_class=model.config.class_count),
    )
    with no_grad():
        conditional = model.forward(x, np.full(3, 500), y).data
    cfg_ok = np.array_equal(guided, conditional)

    # the deterministic sampler: same seed in, same bits out
    sampler = SamplerConfig(steps=8, seed=7)
    shape = (3, 4, 16, 16)
    one = ddim_sample(model, shape, y, sched, sampler)
    two = ddim_sample(model, shape, y, sched, sampler)
    ddim_ok = np.array_equal(one, two)

    ok = stats_ok and cfg_ok and ddim_ok
    _verdict(
        capsys, 9, ok,
        f"mean err {mean_err:.4f} < {mean_tol:.4f}, std err {std_err:.4f} < "
        f"{std_tol:.4f} (3 sigma, 1e4 draws); omega=1 bit-equal to conditional; "
        f"seeded sampler bit-reproducible",
    )


def test_criterion_10_end_to_end_training(capsys, tmp_path):
    # train the default small model on the 8-class synthetic set, then ask
    # four questions: did the smoothed full loss at least halve, do both
    # smoothed losses still trend down over the final third, are trained
    # samples at least 2x MMD-closer to the reference than untrained ones,
    # and do at least 6 of 8 classes sit MMD-closest to their own reference
    t0 = time.perf_counter()
    run = RunConfig(
        out_dir=str(tmp_path / "run"),
        steps=10_000,
        batch_size=8,
        checkpoint_every=2500,
        seed=0,
    )
    result = train(run)
    log = read_loss_log(result.log_path)
    ema = log["ema_full"]
    halved = ema[-1] <= 0.5 * ema[0]
    third = len(ema) // 3
    slope_full = float(np.polyfit(np.arange(third), ema[-third:], 1)[0])
    slope_masked = float(
        np.polyfit(np.arange(third), log["ema_masked"][-third:], 1)[0]
    )
    slopes_ok = slope_full < 0 and slope_masked < 0

    ds = SyntheticDataset(DatasetSpec(seed=0))
    ref, ref_labels = ds.batch(100_000, 1024)
    labels = np.repeat(np.arange(8), 32)
    gen, gen_labels, _ = sample_from_checkpoint(
        result.final_checkpoint, labels, steps=50, omega=1.5, seed=123
    )
    untrained, _, _ = sample_from_checkpoint(
        str(tmp_path / "run" / "ckpt_000000"), labels, steps=50, omega=1.5, seed=123
    )
    report = evaluate(gen, gen_labels, ref, ref_labels, class_count=8)
    mmd_untrained, _ = kernel_mmd(
        untrained.reshape(len(untrained), -1),
        ref.reshape(len(ref), -1),
        bandwidth=report.bandwidth,
    )
    ratio = mmd_untrained / report.mmd
    elapsed = time.perf_counter() - t0
    ok = (
        halved and slopes_ok and ratio >= 2.0
        and report.assigned_correct >= 6 and elapsed < 1800.0
    )
    _verdict(
        capsys, 10, ok,
        f"ema {ema[0]:.3f}->{ema[-1]:.3f} (halved: {halved}), final-third slopes "
        f"{slope_full:.1e}/{slope_masked:.1e} (both < 0), mmd ratio {ratio:.2f} "
        f"(>= 2), classes {report.assigned_correct}/8 (>= 6); "
        f"{elapsed / 60:.1f} min (< 30 min)",
    )
