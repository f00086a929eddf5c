"""The gradient-check suite behind ``indexnet gradcheck``."""

from __future__ import annotations

import zlib
from typing import Callable, Iterable

import numpy as np

from . import ops
from .gradcheck import DEFAULT_TOL, GradCheckResult, check, weighted_sum
from .guided import expand_holistic, indexed_pool, indexed_upsample
from .index_networks import VARIANTS, Family, IndexNetConfig, build_indexnet
from .tensor import Parameter, Tensor, precision

FAMILIES = tuple(Family)


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _leaf(a) -> Parameter:
    return Parameter(np.asarray(a, dtype=np.float64))


def _unary(name, fn, x, seed, **extra) -> Callable[[], GradCheckResult]:
    def run():
        rng = np.random.default_rng(seed)
        xt = _leaf(x)
        proj = weighted_sum(fn(xt, **extra), rng)
        return check(name, lambda: proj(fn(xt, **extra)), {"input": xt})

    return run


def primitive_cases() -> list[tuple[str, Callable[[], GradCheckResult]]]:
    rng = np.random.default_rng(1234)
    x488 = rng.standard_normal((1, 4, 8, 8))
    cases: list[tuple[str, Callable[[], GradCheckResult]]] = []

    def add_case():
        a, b = _leaf(rng.standard_normal((1, 4, 6, 6))), _leaf(rng.standard_normal((1, 4, 1, 1)))
        proj = weighted_sum(ops.add(a, b), np.random.default_rng(1))
        return check("add", lambda: proj(ops.add(a, b)), {"lhs": a, "rhs(broadcast)": b})

    def mul_case():
        a, b = _leaf(rng.standard_normal((1, 4, 6, 6))), _leaf(rng.standard_normal((1, 1, 6, 6)))
        proj = weighted_sum(ops.mul(a, b), np.random.default_rng(2))
        return check("mul", lambda: proj(ops.mul(a, b)), {"lhs": a, "rhs(broadcast)": b})

    cases.append(("add", add_case))
    cases.append(("mul", mul_case))
    cases.append(("scale", _unary("scale", lambda t: ops.scale(t, -2.5), x488, 3)))
    cases.append(("relu", _unary("relu", ops.relu, _away_from_zero(rng, (1, 4, 8, 8)), 4)))
    cases.append(("sigmoid", _unary("sigmoid", ops.sigmoid, x488, 5)))
    cases.append(("region_softmax", _unary("region_softmax", lambda t: ops.region_softmax(t, 2), x488, 6)))
    cases.append(("reshape", _unary("reshape", lambda t: ops.reshape(t, (4, 1, 8, 8)), x488, 7)))
    cases.append(("take_channels", _unary("take_channels", lambda t: ops.take_channels(t, [2, 0, 3, 1, 0]), x488, 8)))
    cases.append(("expand_channels", _unary("expand_channels", lambda t: ops.expand_channels(t, 3), x488[:, :1], 9)))

    def bn_case(training: bool):
        def run():
            r = np.random.default_rng(10 + training)
            x = _leaf(r.standard_normal((2, 4, 4, 4)) * 2 + 0.5)
            gamma = _leaf(r.uniform(0.5, 1.5, (1, 4, 1, 1)))
            beta = _leaf(r.standard_normal((1, 4, 1, 1)))
            rm, rv = r.standard_normal(4), r.uniform(0.5, 2, 4)

            def f():
                return ops.batch_norm(x, gamma, beta, rm.copy(), rv.copy(), training)

            proj = weighted_sum(f(), r)
            name = "batch_norm(train)" if training else "batch_norm(eval)"
            return check(name, lambda: proj(f()), {"input": x, "gamma": gamma, "beta": beta})

        return run

    cases.append(("batch_norm(train)", bn_case(True)))
    cases.append(("batch_norm(eval)", bn_case(False)))

    def conv_case(name, cin, cout, k, stride, padding, groups, bias):
        def run():
            r = np.random.default_rng(zlib.crc32(name.encode()))
            x = _leaf(r.standard_normal((1, cin, 8, 8)))
            w = _leaf(r.standard_normal((cout, cin // groups, k, k)) * 0.5)
            b = _leaf(r.standard_normal((1, cout, 1, 1))) if bias else None

            def f():
                return ops.conv2d(x, w, b, stride, padding, groups)

            proj = weighted_sum(f(), r)
            wrt = {"input": x, "weight": w}
            if b is not None:
                wrt["bias"] = b
            return check(name, lambda: proj(f()), wrt)

        return run

    cases.append(("conv2d(3x3,pad1)", conv_case("conv2d(3x3,pad1)", 4, 3, 3, 1, 1, 1, True)))
    cases.append(("conv2d(2x2,stride2,groups4)", conv_case("conv2d(2x2,stride2,groups4)", 4, 8, 2, 2, 0, 4, False)))
    cases.append(("conv2d(4x4,stride2,pad1)", conv_case("conv2d(4x4,stride2,pad1)", 4, 2, 4, 2, 1, 2, True)))

    def deconv_case():
        r = np.random.default_rng(20)
        x = _leaf(r.standard_normal((1, 4, 4, 4)))
        w = _leaf(r.standard_normal((4, 3, 2, 2)))
        b = _leaf(r.standard_normal((1, 3, 1, 1)))
        proj = weighted_sum(ops.transposed_conv2d(x, w, b, 2), r)
        return check(
            "transposed_conv2d", lambda: proj(ops.transposed_conv2d(x, w, b, 2)), {"input": x, "weight": w, "bias": b}
        )

    cases.append(("transposed_conv2d", deconv_case))
    cases.append(("avg_pool(2,2)", _unary("avg_pool(2,2)", lambda t: ops.avg_pool(t, 2, 2), x488, 21)))
    cases.append(("avg_pool(3,1)", _unary("avg_pool(3,1)", lambda t: ops.avg_pool(t, 3, 1), x488, 22)))
    distinct = rng.permutation(256).reshape(1, 4, 8, 8) / 10.0
    cases.append(("max_pool", _unary("max_pool", lambda t: ops.max_pool_with_argmax(t, 2)[0], distinct, 23)))
    _, argmax = ops.max_pool_with_argmax(Tensor(distinct), 2)
    cases.append(
        ("max_unpool", _unary("max_unpool", lambda t: ops.max_unpool(t, argmax, (8, 8)), x488[:, :, :4, :4], 24))
    )
    cases.append(("nearest_upsample", _unary("nearest_upsample", lambda t: ops.nearest_upsample(t, 2), x488[:, :, :4, :4], 25)))
    cases.append(("bilinear_upsample", _unary("bilinear_upsample", lambda t: ops.bilinear_upsample(t, 2), x488[:, :, :4, :4], 26)))
    cases.append(("depth_to_space", _unary("depth_to_space", lambda t: ops.depth_to_space(t, 2), x488, 27)))
    cases.append(("space_to_depth", _unary("space_to_depth", lambda t: ops.space_to_depth(t, 2), x488, 28)))

    def loss_case(name, fn):
        def run():
            r = np.random.default_rng(29)
            target = r.standard_normal((1, 4, 8, 8))
            pred = _leaf(target + _away_from_zero(r, target.shape))
            return check(name, lambda: fn(pred, Tensor(target)), {"prediction": pred})

        return run

    cases.append(("l1_loss", loss_case("l1_loss", ops.l1_loss)))
    cases.append(("l2_loss", loss_case("l2_loss", ops.l2_loss)))
    return cases


def guided_cases() -> list[tuple[str, Callable[[], GradCheckResult]]]:
    def ip_case():
        r = np.random.default_rng(40)
        x = _leaf(r.standard_normal((1, 4, 8, 8)))
        enc = _leaf(ops.region_softmax(Tensor(r.standard_normal((1, 4, 8, 8))), 2).data)
        proj = weighted_sum(indexed_pool(x, enc, 2), r)
        return check("indexed_pool", lambda: proj(indexed_pool(x, enc, 2)), {"input": x, "encoder_index": enc})

    def ip_holistic_case():
        r = np.random.default_rng(41)
        x = _leaf(r.standard_normal((1, 4, 8, 8)))
        enc = _leaf(r.uniform(0, 1, (1, 1, 8, 8)))
        proj = weighted_sum(indexed_pool(x, enc, 2), r)
        return check(
            "indexed_pool(holistic)", lambda: proj(indexed_pool(x, enc, 2)), {"input": x, "encoder_index": enc}
        )

    def iu_case():
        r = np.random.default_rng(42)
        d = _leaf(r.standard_normal((1, 4, 4, 4)))
        dec = _leaf(r.uniform(0, 1, (1, 4, 8, 8)))
        proj = weighted_sum(indexed_upsample(d, dec, 2), r)
        return check("indexed_upsample", lambda: proj(indexed_upsample(d, dec, 2)), {"input": d, "decoder_index": dec})

    def ip_iu_case():
        r = np.random.default_rng(43)
        x = _leaf(r.standard_normal((1, 4, 8, 8)))
        d = _leaf(r.standard_normal((1, 4, 4, 4)))
        enc = _leaf(r.uniform(0, 1, (1, 4, 8, 8)))
        dec = _leaf(r.uniform(0, 1, (1, 4, 8, 8)))

        def f():
            return indexed_upsample(ops.add(indexed_pool(x, enc, 2), d), dec, 2)

        proj = weighted_sum(f(), r)
        return check(
            "indexed_pool+indexed_upsample",
            lambda: proj(f()),
            {"input": x, "low_res": d, "encoder_index": enc, "decoder_index": dec},
        )

    def expand_case():
        r = np.random.default_rng(44)
        idx = _leaf(r.uniform(0, 1, (1, 1, 8, 8)))
        proj = weighted_sum(expand_holistic(idx, 4), r)
        return check("expand_holistic", lambda: proj(expand_holistic(idx, 4)), {"index": idx})

    return [
        ("indexed_pool", ip_case),
        ("indexed_pool(holistic)", ip_holistic_case),
        ("indexed_upsample", iu_case),
        ("indexed_pool+indexed_upsample", ip_iu_case),
        ("expand_holistic", expand_case),
    ]


def indexnet_case(family: Family | str, variant: str, channels: int = 4, size: int = 8, seed: int = 50):
    cfg = IndexNetConfig.from_variant(family, variant, channels=channels)
    name = f"indexnet[{cfg.label}]"

    def run():
        r = np.random.default_rng(seed)
        net = build_indexnet(cfg, r)
        x = _leaf(r.standard_normal((1, channels, size, size)))
        maps = net(x)
        pe, pd = weighted_sum(maps.encoder_index, r), weighted_sum(maps.decoder_index, r)

        def f():
            m = net(x)
            return ops.add(pe(m.encoder_index), pd(m.decoder_index))

        wrt = {"input": x}
        wrt.update(dict(net.named_parameters()))
        return check(name, f, wrt)

    return name, run


def suite(
    families: Iterable[Family | str] | None = None,
    variants: Iterable[str] | None = None,
    primitives: bool = True,
) -> list[tuple[str, Callable[[], GradCheckResult]]]:
    cases = []
    if primitives:
        cases += primitive_cases()
        cases += guided_cases()
    for fam in families if families is not None else FAMILIES:
        for var in variants if variants is not None else VARIANTS:
            cases.append(indexnet_case(fam, var))
    return cases


def run_cases(cases, tol: float = DEFAULT_TOL, mode: str = "f64") -> list[GradCheckResult]:
    results = []
    with precision(mode):
        for _, run in cases:
            res = run()
            res.tol = tol
            results.append(res)
    return results


def format_results(results: list[GradCheckResult]) -> str:
    lines = [f"{'check':44s} {'group':22s} {'max rel err':>12s}  status"]
    for res in results:
        for group, err in res.errors.items():
            status = "PASS" if err < res.tol else "FAIL"
            lines.append(f"{res.name:44s} {group:22s} {err:12.3e}  {status}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results)} checks, {n_fail} failed")
    return "\n".join(lines)
