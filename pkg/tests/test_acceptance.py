"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the "acceptance
criteria" section at the end of the pytest run. Criterion 8 is a soft check:
its numbers are reported but never fail the run.
"""

import itertools
import random
import time
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from oracles import all_dags, mc_iou
from stackgrasp.cli import main
from stackgrasp.data import dumps_scene, eval_transform, import_vmrd, load_scene, loads_scene, save_scene, synth_dataset
from stackgrasp.data import ParseError, ValidationError
from stackgrasp.geometry import box_intersection, jaccard_rotated
from stackgrasp.metrics import ScenePrediction, evaluate, grasp_match
from stackgrasp.net import ModelConfig, init_params, predict_scene, prediction_from_pairs, train_stage1, train_stage2, training_fit
from stackgrasp.net.checks import end_to_end_check
from stackgrasp.planner import RelationGraph, full_clearing_order, grasp_order_for_target
from stackgrasp.scene import GraspRect, RelationKind, validate_scene
from stackgrasp.tensor import ParamStore
from stackgrasp.tensor.suite import run_suite

ROOT = Path(__file__).resolve().parents[1]
TRAIN_SEED, HELD_OUT_SEED = 1, 2


@pytest.fixture
def criterion(acceptance_lines):
    """Record PASS or FAIL for criterion ``n``; the yielded dict collects details for the line."""

    @contextmanager
    def _run(n: int, title: str):
        info: dict = {}
        t0 = time.perf_counter()
        try:
            yield info
        except BaseException as e:
            acceptance_lines[n] = f"FAIL  {n:>2}. {title}: {type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''}"
            raise
        detail = "; ".join(f"{k} {v}" for k, v in info.items())
        acceptance_lines[n] = f"PASS  {n:>2}. {title} ({detail}; {time.perf_counter() - t0:.1f} s)"

    return _run


# ---------------------------------------------------------------- 1


def test_01_published_numbers_not_reproduced(criterion):
    with criterion(1, "full-scale benchmark figures declared out of scope") as info:
        readme = (ROOT / "README.md").read_text(encoding="utf-8")
        section = readme.split("## Reproducibility", 1)
        assert len(section) == 2, "README has no Reproducibility section"
        body = section[1].split("\n## ", 1)[0].lower()
        assert "not reproducible" in body
        assert "pretrained" in body and "vmrd" in body
        info["README"] = "states it"


# ---------------------------------------------------------------- 2


def _random_rect(rng):
    return GraspRect(*rng.uniform(-4, 4, 2), *rng.uniform(0.5, 8, 2), rng.uniform(-90, 90))


def test_02_rotated_iou_against_monte_carlo(criterion):
    with criterion(2, "rotated IoU vs Monte Carlo on 1000 pairs") as info:
        rng = np.random.default_rng(2024)
        pairs = [(_random_rect(rng), _random_rect(rng)) for _ in range(1000)]
        t0 = time.perf_counter()
        exact = [jaccard_rotated(a, b) for a, b in pairs]
        t_exact = time.perf_counter() - t0
        approx = [mc_iou(a, b, samples=100_000, seed=k) for k, (a, b) in enumerate(pairs)]
        elapsed = time.perf_counter() - t0
        err = float(np.max(np.abs(np.subtract(exact, approx))))
        overlapping = sum(e > 0 for e in exact)
        info.update({"max abs err": f"{err:.2e}", "overlapping pairs": overlapping, "clip time": f"{t_exact:.2f} s"})
        assert overlapping > 300
        assert err < 2e-3
        assert elapsed < 30.0


# ---------------------------------------------------------------- 3


def test_03_gradient_suite(criterion):
    with criterion(3, "central-difference gradient suite") as info:
        t0 = time.perf_counter()
        reports = run_suite(seeds=20, tolerance=1e-3)
        failing = [r.line() for r in reports if not r.passed]
        assert not failing, failing
        e2e = end_to_end_check(draws=5, tolerance=1e-2)
        assert all(r.passed for r in e2e), [r.line() for r in e2e]
        elapsed = time.perf_counter() - t0
        info.update(
            {
                "op checks": len(reports),
                "worst op rel err": f"{max(r.max_rel_error for r in reports):.1e}",
                "worst e2e rel err": f"{max(r.max_rel_error for r in e2e):.1e}",
            }
        )
        assert elapsed < 300.0


# ---------------------------------------------------------------- 4


def test_04_rectangle_metric_boundaries(criterion):
    with criterion(4, "rectangle metric boundaries") as info:
        square = GraspRect(0, 0, 10, 10, 0, cls=1)
        # offset 6: overlap 40, union 160
        quarter = GraspRect(6, 0, 10, 10, 0, cls=1)
        assert jaccard_rotated(square, quarter) == 0.25
        assert not grasp_match(quarter, [square])
        assert grasp_match(GraspRect(5.99, 0, 10, 10, 0, cls=1), [square])

        bar = GraspRect(0, 0, 20, 10, 0, cls=1)
        assert grasp_match(GraspRect(0, 0, 20, 10, 30, cls=1), [bar])
        assert grasp_match(GraspRect(0, 0, 20, 10, -30, cls=1), [bar])
        assert not grasp_match(GraspRect(0, 0, 20, 10, 30.5, cls=1), [bar])
        # 80 and -70 are 30 degrees apart once the 180-degree symmetry is used
        assert grasp_match(GraspRect(0, 0, 20, 10, -70, cls=1), [GraspRect(0, 0, 20, 10, 80, cls=1)])
        assert not grasp_match(GraspRect(0, 0, 20, 10, 0, cls=2), [bar])
        info["cases"] = 8


# ---------------------------------------------------------------- 5


def _bit_orders(n: int, on_top: list[int], members: int) -> list[tuple[int, ...]]:
    """All valid removal orders of ``members`` (bitmask), in lexicographic order.

    ``on_top[v]`` is the bitmask of objects resting directly on ``v``; an
    object may be removed once none of the objects still present rests on it.
    """
    nodes = [v for v in range(n) if members >> v & 1]
    out = []
    for perm in itertools.permutations(nodes):
        present = (1 << n) - 1
        for v in perm:
            if on_top[v] & present & ~(1 << v):
                break
            present &= ~(1 << v)
        else:
            out.append(perm)
    return out


def _minimal_clearing_set(n: int, on_top: list[int], target: int) -> int:
    """Smallest set containing ``target`` that can be removed without disturbing the rest."""
    best = None
    for mask in range(1 << n):
        if not mask >> target & 1:
            continue
        # closed: whatever rests on a member is itself a member
        if all(not (mask >> v & 1) or (on_top[v] & ~mask) == 0 for v in range(n)):
            if best is None or bin(mask).count("1") < bin(best).count("1"):
                best = mask
    return best


def test_05_planner_against_permutations(criterion):
    with criterion(5, "planner vs brute-force permutations, all DAGs up to 5 nodes") as info:
        t0 = time.perf_counter()
        graphs = violations = 0
        for n in range(1, 6):
            full = (1 << n) - 1
            for edges in all_dags(n):
                graphs += 1
                on_top = [0] * n
                for a, b in edges:
                    on_top[b] |= 1 << a
                g = RelationGraph(tuple(range(n)), frozenset(edges))
                valid = _bit_orders(n, on_top, full)
                order = tuple(full_clearing_order(g))
                violations += order not in valid or order != valid[0]
                for t in range(n):
                    need = _minimal_clearing_set(n, on_top, t)
                    sub = tuple(grasp_order_for_target(g, t))
                    ok = [p for p in _bit_orders(n, on_top, need) if p[-1] == t]
                    violations += not ok or sub != ok[0]
        elapsed = time.perf_counter() - t0
        info.update({"graphs": graphs, "violations": violations})
        assert graphs == 1 + 3 + 25 + 543 + 29281
        assert violations == 0
        assert elapsed < 60.0


# ---------------------------------------------------------------- 6


def test_06_metrics_on_ground_truth(criterion):
    with criterion(6, "ground truth scored as prediction on 20 scenes") as info:
        scenes = synth_dataset(20, 6)
        rep = evaluate([(ScenePrediction.from_ground_truth(s), s) for s in scenes])
        values = (rep.map, rep.or_recall, rep.op_precision, rep.ia_accuracy, rep.grasp_accuracy)
        info.update(dict(zip(("mAP", "OR", "OP", "IA", "grasp"), values)))
        assert values == (1.0, 1.0, 1.0, 1.0, 1.0)


# ---------------------------------------------------------------- 7


def test_07_overfit_eight_scenes(criterion):
    with criterion(7, "two-stage overfit on 8 scenes") as info:
        t0 = time.perf_counter()
        scenes = synth_dataset(8, 0)
        # memorising the exact scenes: no augmentation
        cfg = ModelConfig(iterations=500, augment=False)
        ps, log1 = train_stage1(scenes, cfg)
        ps, log2 = train_stage2(scenes, cfg, ps)
        r1 = log1.column("total")[-1] / log1.column("total")[0]
        r2 = log2.column("total")[-1] / log2.column("total")[0]
        fit = training_fit(ps, cfg, scenes)
        elapsed = time.perf_counter() - t0
        info.update(
            {
                "stage-1 loss ratio": f"{r1:.1e}",
                "stage-2 loss ratio": f"{r2:.1e}",
                "relation acc": f"{fit['relation_accuracy']:.3f}",
                "top-1 grasp": f"{fit['grasp_top1']:.3f}",
            }
        )
        assert r1 < 0.1 and r2 < 0.1
        assert fit["relation_accuracy"] >= 0.95
        assert fit["grasp_top1"] >= 0.90
        assert elapsed < 15 * 60


# ---------------------------------------------------------------- 8

# the detector gains most from longer training; the heads settle sooner
STAGE1_ITERATIONS, STAGE2_ITERATIONS = 4000, 1000


def _predictions(ps, cfg, scenes):
    out = []
    for s in scenes:
        gt, img = eval_transform(s, s.pixels, tuple(cfg.input_hw))
        out.append((prediction_from_pairs(*predict_scene(img, ps, cfg)), gt))
    return out


def test_08_generalization_smoke(criterion, acceptance_lines):
    """Soft: the IA figure is reported, a shortfall only warns."""
    train, held = synth_dataset(200, TRAIN_SEED), synth_dataset(50, HELD_OUT_SEED)
    cfg = ModelConfig()
    t0 = time.perf_counter()
    ps, _ = train_stage1(train, cfg.replace(iterations=STAGE1_ITERATIONS))
    ps, _ = train_stage2(train, cfg.replace(iterations=STAGE2_ITERATIONS), ps)
    rep = evaluate(_predictions(ps, cfg, held))
    elapsed = time.perf_counter() - t0
    status = "PASS" if rep.ia_accuracy >= 0.60 else "FAIL (soft, not blocking)"
    acceptance_lines[8] = (
        f"{status}  8. generalization smoke, 200 train / 50 held out (soft): IA {rep.ia_accuracy:.3f} "
        f"(expected >= 0.60); mAP {rep.map:.3f}; OR {rep.or_recall:.3f}; OP {rep.op_precision:.3f}; "
        f"grasp {rep.grasp_accuracy:.3f}; {elapsed:.0f} s"
    )
    if rep.ia_accuracy < 0.60:
        warnings.warn(f"generalization regression: held-out IA {rep.ia_accuracy:.3f} < 0.60")


# ---------------------------------------------------------------- 9


def test_09_msfa_parameter_count_and_weights(criterion, tmp_path, capsys):
    with criterion(9, "MSFA parameter difference and loss weights echoed") as info:
        cfg = ModelConfig()
        on, off = init_params(cfg).count(), init_params(cfg.replace(msfa=False)).count()
        f = cfg.fusion_channels
        # one 1x1 lateral per scale, then a 3x3 smoothing conv per scale, weights only
        lateral = sum(c * f for c in cfg.channels)
        fusion = len(cfg.channels) * f * f * 9
        assert on - off == lateral + fusion

        assert main(["synth", "--out", str(tmp_path / "d"), "--count", "2", "--seed", "3"]) == 0
        capsys.readouterr()
        code = main(["train", "--stage", "1", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "m.ckpt"), "--iterations", "1"])
        err = capsys.readouterr().err
        assert code == 0
        echoed = {ln.strip("# ").strip() for ln in err.splitlines()}
        assert "alpha = 5.0" in echoed and "beta = 5.0" in echoed
        info.update({"difference": on - off, "lateral": lateral, "fusion": fusion, "echo": "alpha = 5.0, beta = 5.0"})


# ---------------------------------------------------------------- 10


def test_10_disjoint_pairs_short_circuit(criterion):
    with criterion(10, "disjoint pairs predicted NoRel on the 50-scene eval set") as info:
        cfg = ModelConfig()
        held = synth_dataset(50, HELD_OUT_SEED)
        disjoint = overlapping = 0
        for k, s in enumerate(held):
            ps = init_params(cfg, seed=k)
            gt, img = eval_transform(s, s.pixels, tuple(cfg.input_hw))
            objs, _, pairs = predict_scene(img, ps, cfg, objects=gt.objects)
            by_id = {o.id: o for o in objs}
            for p in pairs:
                a, b = by_id[p.pair[0]], by_id[p.pair[1]]
                if box_intersection(a, b) is None:
                    disjoint += 1
                    assert list(p.probs_ij) == list(p.probs_ji) == [0.0, 0.0, 1.0], p
                    assert prediction_from_pairs(objs, [], [p]).relations[p.pair] is RelationKind.NO_REL
                else:
                    overlapping += 1
        info.update({"disjoint pairs": disjoint, "overlapping pairs": overlapping})
        assert disjoint > 0 and overlapping > 0


# ---------------------------------------------------------------- 11

VMRD_ANNOTATION = b"""<annotation>
  <filename>000001.png</filename>
  <size><width>120</width><height>90</height><depth>3</depth></size>
  <object>
    <name>box</name><index>0</index>
    <bndbox><xmin>10</xmin><ymin>20</ymin><xmax>60</xmax><ymax>70</ymax></bndbox>
    <father></father><children><num>1</num></children>
  </object>
  <object>
    <name>tape</name><index>1</index>
    <bndbox><xmin>30</xmin><ymin>30</ymin><xmax>80</xmax><ymax>60</ymax></bndbox>
    <father><num>0</num></father><children></children>
  </object>
</annotation>
"""
VMRD_GRASPS = b"20 40 50 40 50 50 20 50 0\n40 40 70 40 70 50 40 50 1\n"


def _mutate(rng: random.Random, data: bytes) -> bytes:
    buf = bytearray(data)
    for _ in range(rng.randint(1, 4)):
        pos = rng.randrange(len(buf))
        op = rng.random()
        if op < 0.5:
            buf[pos] = rng.randrange(256)
        elif op < 0.75:
            del buf[pos]
        else:
            buf.insert(pos, rng.randrange(256))
    return bytes(buf)


def test_11_round_trips_and_fuzz(criterion, tmp_path):
    with criterion(11, "scene and checkpoint round-trips, 10k-mutation importer fuzz") as info:
        scenes = synth_dataset(10, 11)
        for k, s in enumerate(scenes):
            p = tmp_path / f"s{k}.json"
            save_scene(s, p)
            q = tmp_path / f"t{k}.json"
            save_scene(load_scene(p), q)
            assert p.read_bytes() == q.read_bytes()

        ps = init_params(ModelConfig(), seed=5)
        ps.save(tmp_path / "a.ckpt")
        other = init_params(ModelConfig(), seed=6)
        other.load(tmp_path / "a.ckpt")
        other.save(tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert isinstance(other, ParamStore)

        root = tmp_path / "vmrd"
        (root / "Annotations").mkdir(parents=True)
        (root / "Grasps").mkdir()
        rng = random.Random(11)
        parsed = 0
        for _ in range(10_000):
            ann, grs = VMRD_ANNOTATION, VMRD_GRASPS
            if rng.random() < 0.7:
                ann = _mutate(rng, ann)
            else:
                grs = _mutate(rng, grs)
            (root / "Annotations" / "000001.xml").write_bytes(ann)
            (root / "Grasps" / "000001.txt").write_bytes(grs)
            imported, rep = import_vmrd(root)
            assert rep.parsed + rep.skipped == 1
            for s in imported:
                assert validate_scene(s) == []
                text = dumps_scene(s)
                assert dumps_scene(loads_scene(text)) == text
            parsed += rep.parsed

        text = dumps_scene(scenes[0]).encode()
        rejected = 0
        for _ in range(2_000):
            try:
                loads_scene(_mutate(rng, text).decode("utf-8", errors="replace"))
            except (ParseError, ValidationError):
                rejected += 1
        info.update({"scene files": len(scenes), "importer runs": 10_000, "parsed": parsed, "bad scene texts rejected": rejected})
        assert 0 < parsed < 10_000
