"""Acceptance suite: one test per criterion, each printing a single verdict line.

Criteria 6 and 7 train 40 small columns on synthetic glyphs and take roughly
a quarter of an hour on one core; everything else finishes in seconds.
"""
import functools
import time

import numpy as np
import pytest

import oracles
from mcdnn import kernels, nn
from mcdnn.arch import REFERENCE_NETS, Full, infer_shapes, parse_arch, render_arch
from mcdnn.cli import main as cli_main
from mcdnn.data_io import Dataset, Sample, preprocess_dataset, split_by_writer, synth_glyphs
from mcdnn.ensemble import EnsembleSpec, benchmark, evaluate
from mcdnn.imageprep import Order, PreprocessConfig, compare_pipelines, normalize_for_net
from mcdnn.trainer import NO_DEFORM, Hyperparams, top1_error, train_column
from test_imageprep import load_golden, run_golden
from toys import TOY_ARCH, bars


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return emit


# 1 -------------------------------------------------------------------------

# side of the last pooled maps, worked out by hand for every published column
HAND_TRACE = [46, 23, 22, 11, 10, 5, 4, 2]


def test_criterion_1_architecture_fidelity(verdict):
    t0 = time.perf_counter()
    problems = []
    for key, text in REFERENCE_NETS.items():
        spec = parse_arch(text)
        if render_arch(spec) != text:
            problems.append(f"net {key} does not round-trip")
        plan = infer_shapes(spec)
        sides = [s.h for s in plan.layers if not isinstance(s.layer, Full)]
        if sides != HAND_TRACE:
            problems.append(f"net {key} trace {sides}")
        first_full = next(i for i, s in enumerate(plan.layers) if isinstance(s.layer, Full))
        before = plan.layers[first_full - 1]
        if (before.h, before.w) != (2, 2):
            problems.append(f"net {key} feeds {before.h}x{before.w} maps to the first full layer")
    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 1.0
    verdict(1, ok, f"8 nets parsed/round-tripped/2x2 before FC in {elapsed:.3f}s {problems}")


# 2 -------------------------------------------------------------------------

def random_tiny_arch(rng):
    """A valid small architecture string with 1-2 conv stages and 0-2 hidden layers."""
    while True:
        side = int(rng.integers(6, 13))
        parts = [f"{side}x{side}"]
        for _ in range(int(rng.integers(1, 3))):
            k = int(rng.integers(1, 4))
            if side - k + 1 < 2:
                break
            parts.append(f"{int(rng.integers(1, 4))}C{k}")
            side = side - k + 1
            pools = [p for p in (2, 3) if side % p == 0]
            if pools and rng.random() < 0.7:
                p = int(rng.choice(pools))
                parts.append(f"MP{p}")
                side //= p
        for _ in range(int(rng.integers(0, 3))):
            parts.append(f"{int(rng.integers(2, 6))}N")
        parts.append(f"{int(rng.integers(2, 6))}N")
        try:
            return parse_arch("-".join(parts))
        except ValueError:
            continue


def test_criterion_2_gradient_correctness(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst, worst_arch = 0.0, None
    n = 24
    for i in range(n):
        spec = random_tiny_arch(rng)
        col = nn.init_column(spec, i, np.float64)
        for p in col.params:
            if p is not None:
                p[1][:] = rng.normal(0, 0.1, p[1].shape)
        x = rng.uniform(-1, 1, (1, spec.input_h, spec.input_w))
        err = nn.grad_check(col, x, int(rng.integers(spec.class_count)))
        if err > worst:
            worst, worst_arch = err, render_arch(spec)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 120
    verdict(2, ok, f"{n} random columns, max rel error {worst:.3g} ({worst_arch}) "
                   f"in {elapsed:.1f}s")


# 3 -------------------------------------------------------------------------

def test_criterion_3_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = {}
    for name, impl in kernels.implementations().items():
        e_conv = e_pool = e_fc = 0.0
        for _ in range(100):
            cin, maps = int(rng.integers(1, 4)), int(rng.integers(1, 5))
            h, w = int(rng.integers(3, 11)), int(rng.integers(3, 11))
            k = int(rng.integers(1, min(h, w, 4) + 1))
            x = rng.normal(size=(cin, h, w))
            wt = rng.normal(size=(maps, cin, k, k))
            b = rng.normal(size=maps)
            got = impl.conv_forward(x, wt, b)
            e_conv = max(e_conv, float(np.abs(got - np.array(
                oracles.conv(x.tolist(), wt.tolist(), b.tolist()))).max()))
        for _ in range(100):
            p = int(rng.integers(2, 4))
            c, a, bb = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
            x = rng.integers(-3, 4, (c, a * p, bb * p)).astype(np.float64)
            out, _ = impl.maxpool_forward(x, p)
            e_pool = max(e_pool, float(np.abs(out - np.array(oracles.maxpool(x.tolist(), p)[0])).max()))
        for _ in range(100):
            n_in, n_out = int(rng.integers(1, 60)), int(rng.integers(1, 25))
            x, wt, b = rng.normal(size=n_in), rng.normal(size=(n_out, n_in)), rng.normal(size=n_out)
            got = impl.fc_forward(x, wt, b)
            e_fc = max(e_fc, float(np.abs(got - np.array(
                oracles.fc(x.tolist(), wt.tolist(), b.tolist()))).max()))
        worst[name] = (e_conv, e_pool, e_fc)
    elapsed = time.perf_counter() - t0
    ok = all(max(v) <= 1e-6 for v in worst.values()) and elapsed < 60
    detail = " ".join(f"{k}: conv={v[0]:.2g} pool={v[1]:.2g} fc={v[2]:.2g}" for k, v in worst.items())
    verdict(3, ok, f"100 shapes per op per backend, max abs diff {detail} in {elapsed:.1f}s")


# 4 -------------------------------------------------------------------------

SMALL_ARCH = "48x48-10C3-MP2-20C2-MP2-40C2-MP2-80C2-MP2-100N-20N"


def test_criterion_4_ensemble_identity_and_monotonicity(verdict):
    t0 = time.perf_counter()
    data = preprocess_dataset(synth_glyphs(20, 8, 4, seed=44), PreprocessConfig())
    spec = parse_arch(SMALL_ARCH)
    cols = [nn.init_column(spec, s) for s in range(3)]
    ks = (1, 5, 10)
    solo = evaluate([cols[0]], EnsembleSpec((0,)), data, ks=ks).topk_counts
    mismatches, monotone_fail, evaluations = [], 0, 1
    for copies in range(2, 6):
        clones = [cols[0].copy() for _ in range(copies)]
        counts = evaluate(clones, EnsembleSpec.all_of(clones), data, ks=ks).topk_counts
        evaluations += 1
        if counts != solo:
            mismatches.append((copies, counts))
        monotone_fail += not counts[10] <= counts[1]
    for members in ((0,), (1,), (2,), (0, 1), (1, 2), (0, 1, 2)):
        counts = evaluate(cols, EnsembleSpec(members), data, ks=ks).topk_counts
        evaluations += 1
        monotone_fail += not counts[10] <= counts[5] <= counts[1]
    monotone_fail += not solo[10] <= solo[1]
    elapsed = time.perf_counter() - t0
    ok = not mismatches and monotone_fail == 0 and elapsed < 60
    verdict(4, ok, f"2-5 clones reproduce {solo}; top10<=top1 on {evaluations - monotone_fail}/"
                   f"{evaluations} evaluations in {elapsed:.1f}s")


# 5 -------------------------------------------------------------------------

def test_criterion_5_latency_additivity(verdict):
    t0 = time.perf_counter()
    archs = ["24x24-8C3-MP2-10N-12N", "24x24-6C3-MP2-8C3-MP3-12N",
             "24x24-12C5-MP4-20N-12N", "24x24-4C3-MP2-6C2-16N-12N"]
    cols = [nn.init_column(parse_arch(a), i) for i, a in enumerate(archs)]
    rng = np.random.default_rng(5)
    data = Dataset([Sample(rng.integers(0, 256, (24, 24), dtype=np.uint8), i % 12)
                    for i in range(100)], 12)
    check = benchmark(cols, EnsembleSpec((0, 1, 2, 3)), data, warmup=10, repeats=5)
    elapsed = time.perf_counter() - t0
    ok = check.ok(0.10) and elapsed < 120
    members = " + ".join(f"{m:.4f}" for m in check.member_ms)
    verdict(5, ok, f"ensemble {check.ensemble_ms:.4f} ms vs members {members} = "
                   f"{check.member_sum_ms:.4f} ms, ratio {check.ratio:.3f} in {elapsed:.1f}s")


# 6 and 7 -------------------------------------------------------------------

DRAWS = 10
COLUMNS = 4
HP = Hyperparams(epochs=2, lr0=0.01, lr_decay=0.9)
CTS = PreprocessConfig(order=Order.CONTRAST_THEN_SCALE)
STC = PreprocessConfig(order=Order.SCALE_THEN_CONTRAST)


@functools.lru_cache(maxsize=None)
def glyph_task():
    """20 classes; writers 0-39 give 200 train and 40-49 give 50 test samples per class."""
    raw = synth_glyphs(20, 250, 50, seed=0)
    train, test, _ = split_by_writer(raw, range(40), range(40, 50))
    return (preprocess_dataset(train, CTS), preprocess_dataset(test, CTS),
            preprocess_dataset(test, STC), raw)


@functools.lru_cache(maxsize=None)
def trained_column(draw, member):
    """Returns (column, CPU seconds spent training it)."""
    train = glyph_task()[0]
    t0 = time.process_time()
    col, _ = train_column(parse_arch(SMALL_ARCH), train, None, HP, seed=1000 * draw + member)
    return col, time.process_time() - t0


def test_criterion_7_preprocessing_skew(verdict):
    t0 = time.process_time()
    _, test_cts, test_stc, raw = glyph_task()
    report = compare_pipelines([s.image for s in raw], CTS, STC)
    rows, worse = [], 0
    for d in range(DRAWS):
        col, _ = trained_column(d, 0)
        matched = evaluate([col], EnsembleSpec((0,)), test_cts, ks=(1,)).topk_counts[1]
        skewed = evaluate([col], EnsembleSpec((0,)), test_stc, ks=(1,)).topk_counts[1]
        worse += skewed >= matched
        rows.append(f"{matched}/{skewed}")
    cpu = time.process_time() - t0
    ok = worse >= 9 and report.mean > 0 and cpu <= 30 * 60
    verdict(7, ok, f"mismatched >= matched in {worse}/{DRAWS} draws "
                   f"(matched/mismatched errors of {len(test_cts)}: {' '.join(rows)}); "
                   f"skew mean {report.mean:.4g} max {report.max:.4g}; cpu {cpu / 60:.1f} min")


def test_criterion_6_multi_column_benefit(verdict):
    _, test_cts, _, _ = glyph_task()
    wins, rows, cpu = 0, [], 0.0
    for d in range(DRAWS):
        cols = []
        for m in range(COLUMNS):
            col, secs = trained_column(d, m)
            cols.append(col)
            cpu += secs
        t0 = time.process_time()
        member_err = [evaluate([c], EnsembleSpec((0,)), test_cts, ks=(1,)).top1_error
                      for c in cols]
        ens_err = evaluate(cols, EnsembleSpec.all_of(cols), test_cts, ks=(1,)).top1_error
        cpu += time.process_time() - t0
        wins += ens_err < np.mean(member_err)
        rows.append(f"{100 * np.mean(member_err):.2f}->{100 * ens_err:.2f}")
    ok = wins >= 9 and cpu <= 60 * 60
    verdict(6, ok, f"ensemble beats mean member in {wins}/{DRAWS} draws "
                   f"(mean member->ensemble %: {' '.join(rows)}); cpu {cpu / 60:.1f} min")


# 8 -------------------------------------------------------------------------

def pipeline_run(root, capsys, monkeypatch):
    """Run the CLI pipeline inside ``root`` with relative paths, so reports that
    name their inputs are comparable across directories."""
    root.mkdir()
    monkeypatch.chdir(root)
    steps = [
        ["synth-data", "raw.mcds", "--classes", 3, "--per-class", 8, "--writers", 4, "--seed", 8],
        ["train", "--arch", "48x48-4C5-MP4-6N-3N", "--data", "raw.mcds", "--val", "raw.mcds",
         "--epochs", 2, "--lr0", 0.01, "--seed", 8, "--output", "col.col",
         "--checkpoint-dir", "ck"],
        ["eval", "col.col", "--data", "raw.mcds", "--k", "1,2", "--report", "eval.txt",
         "--json", "eval.json"],
        ["skew-report", "raw.mcds", "--report", "skew.json"],
    ]
    for step in steps:
        status = cli_main([str(a) for a in step])
        capsys.readouterr()
        if status != 0:
            raise AssertionError(f"{step[0]} exited {status}")
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_8_determinism(verdict, tmp_path, capsys, monkeypatch, fixtures_dir):
    a = pipeline_run(tmp_path / "a", capsys, monkeypatch)
    b = pipeline_run(tmp_path / "b", capsys, monkeypatch)
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    golden = [c for c in load_golden(fixtures_dir / "golden_vectors.txt") if c[0] == "resize"]
    bad_golden = sum(run_golden(op, img, params).tobytes() != exp.tobytes()
                     for op, img, params, exp in golden)
    ok = not differing and bad_golden == 0 and len(a) >= 7
    verdict(8, ok, f"{len(a)} files byte-identical across two runs (differing: {differing}); "
                   f"{len(golden) - bad_golden}/{len(golden)} resize golden vectors exact")


# 9 -------------------------------------------------------------------------

def test_criterion_9_single_column_learnability(verdict):
    t0 = time.perf_counter()
    train = bars(40, seed=1)
    hp = Hyperparams(epochs=30, lr0=0.05, lr_decay=0.95, deform=NO_DEFORM)
    col, log = train_column(parse_arch(TOY_ARCH), train, train, hp, seed=0)
    first_zero = next((r.epoch for r in log.records if r.val_top1 == 0.0), None)
    final = top1_error(col, [normalize_for_net(s.image) for s in train], train.labels)
    elapsed = time.perf_counter() - t0
    ok = first_zero is not None and final == 0.0 and elapsed < 60
    verdict(9, ok, f"2-class toy training error 0% first at epoch {first_zero}, "
                   f"kept column {100 * final:.1f}% in {elapsed:.1f}s")
