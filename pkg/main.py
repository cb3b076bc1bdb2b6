#!/usr/bin/env python3
"""
diffem: blind deconvolution with diffusion priors
Main execution entry point
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import structlog
from rich.console import Console

from config import Config, DiffusionConfig
from core.benchmark import SWEEP_CSV_NAME, benchmark, regularizer_sweep, report_table, sweep_table, write_sweep_csv
from core.config_loader import ConfigLoader
from core.degrade import make_dataset, sample_kernel_bank
from core.denoiser import load_weights, save_weights, train
from core.em import diffusion_em, fast_diffusion_em, init_kernel
from core.errors import ConfigError, DiffemError
from core.log_manager import RunLogManager, configure_logging, write_jsonl
from core.mstep import make_regularizer, hqs_mstep
from core.sampler import particle_generators, sample_nonblind, schedule_from_config
from core.tensor_io import read_image, read_kernel, write_image, write_kernel
from models.kernel import BlurKernel
from models.settings import DegradationConfig, EmConfig, GuidanceKind, MStepConfig, ScheduleConfig, TrainConfig

logger = structlog.get_logger(__name__)
console = Console()

DEFAULT_PRIOR = "power_law_texture"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_INTERRUPT = 130


class DiffemArgumentParser(argparse.ArgumentParser):
    """使い方エラーを終了コード 1 で返すパーサー"""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"❌ {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def validate_environment() -> bool:
    """環境の事前チェック"""
    errors = Config.validate()
    if errors:
        print("❌ Environment validation failed:")
        for error in errors:
            print(f"   • {error}")
        return False
    return True


def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _str_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _lambda_map(text: Optional[str]) -> Optional[Dict[str, List[float]]]:
    """l2=1,pnp=2:5:10 → {"l2": [1.0], "pnp": [2.0, 5.0, 10.0]}"""
    if not text:
        return None
    lams = {}
    for item in _str_list(text):
        name, sep, values = item.partition("=")
        try:
            if not sep:
                raise ValueError(item)
            lams[name.strip()] = [float(v) for v in values.split(":") if v.strip()]
        except ValueError:
            raise ConfigError(f"--lambdas expects name=value[:value...] entries, got '{item}'")
    return lams


def _load_denoiser(args):
    if getattr(args, "weights", None):
        return load_weights(args.weights)
    return None


def _build_model(args, shape):
    loader = ConfigLoader(args.configs_dir)
    return loader.load_prior(args.prior or DEFAULT_PRIOR).build(tuple(shape))


def build_em_config(args) -> EmConfig:
    """プリセット → CLI 指定の順で EmConfig を組み立てる"""
    if getattr(args, "preset", None):
        preset = ConfigLoader(args.configs_dir).load_preset(args.preset)
        config = preset.em
        if args.prior is None:
            args.prior = preset.prior
    else:
        guidance = args.guidance or "pigdm"
        config = EmConfig(guidance=guidance,
                          schedule=ScheduleConfig(T=DiffusionConfig.default_T(guidance)))

    schedule = config.schedule
    if args.T is not None:
        schedule = replace(schedule, T=args.T)
    if getattr(args, "zeta", None):
        schedule = replace(schedule, zeta_mode=args.zeta)

    mstep = config.mstep
    overrides = {
        "J": args.iters, "lam": args.lam, "beta_hqs": args.beta, "regularizer": args.reg, "kernel_size": args.ksize,
    }
    mstep = replace(mstep, **{k: v for k, v in overrides.items() if v is not None})

    em_overrides = {
        "L": args.L, "n": args.n, "kernel_init": args.init, "mstep_every": getattr(args, "mstep_every", None),
        "seed": args.seed, "dps_weight": getattr(args, "dps_weight", None),
    }
    if args.guidance is not None:
        em_overrides["guidance"] = GuidanceKind(args.guidance)
    return replace(config, schedule=schedule, mstep=mstep, **{k: v for k, v in em_overrides.items() if v is not None})


def cmd_degrade(args) -> bool:
    """データセット生成"""
    config = DegradationConfig(sigma=args.sigma, kernel_size=args.ksize, rng_seed=args.seed or 0)
    out_dir = Config.get_output_dir(args.out)
    log_manager = RunLogManager(out_dir, "degrade")
    try:
        print(f"🎞️  Degrading images from {args.input} (σ={config.sigma:.4f}, k={config.kernel_size})")
        result = make_dataset(Path(args.input), out_dir, config, threads=Config.get_threads(args.threads))
        for record in result.records:
            log_manager.log_item(record.error is None)
            if record.error:
                log_manager.log_system_event("error", "degrade", "item_failed",
                                             {"source": record.source, "error": record.error})
        log_manager.log_artifact(result.manifest_path)
        print(f"✅ {len(result.records) - len(result.failures)}/{len(result.records)} items written")
        print(f"📋 Manifest: {result.manifest_path}")
        return True
    finally:
        log_manager.close()


def cmd_sample(args) -> bool:
    """既知カーネルでの事後サンプリング"""
    y = read_image(args.y)
    kernel = read_kernel(args.kernel)
    guidance = GuidanceKind(args.guidance)
    T = args.T or DiffusionConfig.default_T(guidance.value)
    schedule = schedule_from_config(ScheduleConfig(T=T, zeta_mode=args.zeta or DiffusionConfig.ZETA_MODE))
    model = _build_model(args, y.shape)
    out_dir = Config.get_output_dir(args.out)
    log_manager = RunLogManager(out_dir, "sample")
    try:
        print(f"🎲 Sampling {args.n} particle(s) with {guidance.value} guidance, T={T}")
        ensemble = sample_nonblind(y, args.sigma, kernel, args.n, schedule, guidance, model,
                                   particle_generators(args.seed or 0, args.n), dps_weight=args.dps_weight)
        for i, particle in enumerate(ensemble.particles):
            log_manager.log_artifact(write_image(out_dir / f"particle_{i:03d}.{args.format}", particle))
        log_manager.log_artifact(write_image(out_dir / f"mean.{args.format}", ensemble.mean()))
        print(f"✅ Samples written to {out_dir}")
        return True
    finally:
        log_manager.close()


def cmd_estimate_kernel(args) -> bool:
    """鮮明画像既知のカーネル推定"""
    y = read_image(args.y)
    sharp = np.stack([read_image(p) for p in _str_list(args.sharp)])
    mstep = MStepConfig(J=args.iters or DiffusionConfig.HQS_ITERATIONS,
                        lam=DiffusionConfig.LAMBDA if args.lam is None else args.lam,
                        beta_hqs=args.beta or DiffusionConfig.BETA_HQS,
                        regularizer=args.reg or "l2",
                        kernel_size=args.ksize or DiffusionConfig.KERNEL_SIZE)
    regularizer = make_regularizer(mstep.regularizer, denoiser=_load_denoiser(args))
    out_path = Path(args.out)
    log_manager = RunLogManager(out_path.parent, "estimate-kernel")
    try:
        trace: list = []
        kernel = hqs_mstep(y, sharp, args.sigma, mstep, init_kernel(args.init or DiffusionConfig.KERNEL_INIT,
                                                                    mstep.kernel_size),
                           regularizer, trace=trace)
        log_manager.log_artifact(write_kernel(out_path, kernel))
        trace_path = write_jsonl(out_path.with_suffix(".hqs.jsonl"), [r.to_dict() for r in trace])
        log_manager.log_artifact(trace_path)
        print(f"✅ Kernel ({kernel.size}×{kernel.size}, {mstep.regularizer}) written to {out_path}")
        return True
    finally:
        log_manager.close()


def cmd_train_denoiser(args) -> bool:
    """カーネルデノイザーの学習"""
    config = TrainConfig(steps=args.steps, seed=args.seed or 0, batch_size=args.batch_size,
                         learning_rate=args.lr, dataset_size=args.dataset_size)
    out_path = Path(args.out)
    log_manager = RunLogManager(out_path.parent, "train-denoiser")
    try:
        rng = np.random.default_rng(config.seed)
        kernels = sample_kernel_bank(config.dataset_size, config.kernel_sizes, rng)
        print(f"🧠 Training kernel denoiser on {len(kernels)} kernels for {config.steps} steps")
        net, history = train(kernels, config)
        log_manager.log_artifact(save_weights(net, out_path))
        write_jsonl(out_path.with_suffix(".loss.jsonl"), [{"step": i, "monitor_loss": v} for i, v in enumerate(history)])
        print(f"✅ Monitor loss {history[0]:.4e} → {history[-1]:.4e}; weights written to {out_path}")
        return True
    finally:
        log_manager.close()


def cmd_deblur(args) -> bool:
    """Diffusion EM / Fast Diffusion EM によるブラインド復元"""
    y = read_image(args.y)
    config = build_em_config(args)
    model = _build_model(args, y.shape)
    regularizer = make_regularizer(config.mstep.regularizer, denoiser=_load_denoiser(args))
    out_dir = Config.get_output_dir(args.out)
    log_manager = RunLogManager(out_dir, "deblur")
    try:
        print(f"🔭 {args.algo} / {config.guidance.value}: n={config.n}, T={config.schedule.T}, "
              f"k={config.mstep.kernel_size}, reg={config.mstep.regularizer}")
        driver = fast_diffusion_em if args.algo == "fastem" else diffusion_em
        ensemble, kernel, trace = driver(y, args.sigma, config, model, regularizer=regularizer,
                                         log_manager=log_manager)

        rows = []
        for record in trace.records:
            row = record.to_dict()
            if record.step in trace.kernels:
                path = write_kernel(out_dir / "kernels" / f"step_{record.step:04d}.rtf",
                                    BlurKernel.normalized(trace.kernels[record.step]))
                row["kernel_path"] = str(path.relative_to(out_dir))
            rows.append(row)
        write_jsonl(out_dir / "trace.jsonl", rows)

        for i, particle in enumerate(ensemble.particles):
            write_image(out_dir / f"particle_{i:03d}.{args.format}", particle)
        log_manager.log_artifact(write_image(out_dir / f"restored.{args.format}", ensemble.mean()))
        log_manager.log_artifact(write_kernel(out_dir / "kernel.rtf", kernel))
        print(f"✅ Restoration and kernel written to {out_dir}")
        return True
    finally:
        log_manager.close()


def cmd_sweep_reg(args) -> bool:
    """正則化と雑音レベルのスイープ"""
    mstep = MStepConfig(J=args.iters or DiffusionConfig.HQS_ITERATIONS,
                        lam=DiffusionConfig.LAMBDA if args.lam is None else args.lam,
                        beta_hqs=args.beta or DiffusionConfig.BETA_HQS)
    out_dir = Config.get_output_dir(args.out)
    log_manager = RunLogManager(out_dir, "sweep-reg")
    try:
        rows = regularizer_sweep(Path(args.manifest), _float_list(args.sigmas), _str_list(args.regs), mstep,
                                 denoiser=_load_denoiser(args), seed=args.seed or 0,
                                 threads=Config.get_threads(args.threads), lams=_lambda_map(args.lambdas))
        log_manager.log_artifact(write_sweep_csv(rows, out_dir / SWEEP_CSV_NAME))
        console.print(sweep_table(rows))
        return True
    finally:
        log_manager.close()


def cmd_benchmark(args) -> bool:
    """マニフェスト全体のベンチマーク"""
    config = build_em_config(args)
    regularizer = make_regularizer(config.mstep.regularizer, denoiser=_load_denoiser(args))
    loader = ConfigLoader(args.configs_dir)
    prior = loader.load_prior(args.prior or DEFAULT_PRIOR)
    out_dir = Config.get_output_dir(args.out)
    log_manager = RunLogManager(out_dir, "benchmark")
    try:
        report = benchmark(Path(args.manifest), config, args.algo, prior.build, out_dir, regularizer=regularizer,
                           threads=Config.get_threads(args.threads), log_manager=log_manager)
        console.print(report_table(report))
        log_manager.print_session_summary()
        return True
    finally:
        log_manager.close()


def _add_em_arguments(p):
    p.add_argument("--algo", choices=["em", "fastem"], default="fastem", help="Diffusion EM or Fast Diffusion EM")
    p.add_argument("--guidance", choices=[g.value for g in GuidanceKind], help="Likelihood guidance (default: pigdm)")
    p.add_argument("--n", type=int, help="Particles")
    p.add_argument("--L", type=int, help="EM iterations (em only)")
    p.add_argument("--T", type=int, help="Diffusion steps (default: 1000 dps / 100 pigdm)")
    p.add_argument("--ksize", type=int, help=f"Kernel size (default: {DiffusionConfig.KERNEL_SIZE})")
    p.add_argument("--init", help="Kernel init: delta | uniform | gaussian:STD | gaussian:k/6")
    p.add_argument("--reg", choices=["identity", "l1", "l2", "pnp"], help="Kernel regularizer")
    p.add_argument("--lambda", dest="lam", type=float, help="Regularization weight λ")
    p.add_argument("--beta", type=float, help="HQS coupling β")
    p.add_argument("--iters", type=int, help="HQS iterations J")
    p.add_argument("--mstep-every", dest="mstep_every", type=int, help="Fast EM: run the M-step every m steps")
    p.add_argument("--dps-weight", dest="dps_weight", type=float, help="DPS guidance weight (default: 1/σ²)")
    p.add_argument("--zeta", choices=["sqrt-alphabar", "one"], help="Guidance step schedule ζ_t")
    p.add_argument("--weights", help="Denoiser weights (DNW1) for --reg pnp")
    p.add_argument("--prior", help=f"Prior YAML name under configs/priors (default: {DEFAULT_PRIOR})")
    p.add_argument("--preset", help="Run preset YAML name under configs/presets")


def build_parser() -> argparse.ArgumentParser:
    parser = DiffemArgumentParser(
        prog="diffem",
        description="Blind deconvolution with diffusion priors (Diffusion EM / Fast Diffusion EM)",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  diffem degrade --input ./photos --out ./data --sigma 0.0196
  diffem sample --y y.rtf --kernel k.rtf --sigma 0.02 --guidance pigdm --n 4 --out ./samples
  diffem estimate-kernel --y y.rtf --sharp x.rtf --sigma 0.02 --reg l2 --out k_hat.rtf
  diffem train-denoiser --out denoiser.dnw --steps 2000 --seed 0
  diffem deblur --y y.rtf --sigma 0.02 --algo fastem --guidance pigdm --n 4 --out ./result
  diffem sweep-reg --manifest ./data/manifest.jsonl --sigmas 0.0196,0.0784 --regs l2,pnp --weights denoiser.dnw
  diffem benchmark --manifest ./data/manifest.jsonl --algo fastem --guidance pigdm --n 1 --out ./bench
        """
    )
    parser.add_argument("--threads", type=int, help=f"Worker threads (fallback: ${Config.THREADS_ENV_VAR}, then 1)")
    parser.add_argument("--seed", type=int, help="Master random seed (default: 0)")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    parser.add_argument("--no-progress", action="store_true", help="Disable progress bars")
    parser.add_argument("--configs-dir", help=f"Configs directory (default: {Config.DEFAULT_CONFIGS_DIR})")

    # サブコマンド側でも --seed を受け付ける（未指定なら全体指定を保持）
    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Master random seed (default: 0)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", parents=[seeded], help="Blur and noise a directory of images into a dataset")
    p.add_argument("--input", "--images", dest="input", required=True, help="Directory of PNG / RTF1 images")
    p.add_argument("--out", required=True, help="Dataset output directory")
    p.add_argument("--sigma", type=float, default=5.0 / 255.0, help="Noise std (default: 5/255)")
    p.add_argument("--ksize", type=int, default=DiffusionConfig.KERNEL_SIZE, help="Kernel size")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("sample", parents=[seeded], help="Posterior sampling with a known kernel")
    p.add_argument("--y", required=True, help="Degraded image")
    p.add_argument("--kernel", required=True, help="Kernel (RTF1, C=1)")
    p.add_argument("--sigma", type=float, required=True, help="Noise std")
    p.add_argument("--guidance", choices=[g.value for g in GuidanceKind], default="pigdm")
    p.add_argument("--T", type=int, help="Diffusion steps")
    p.add_argument("--n", type=int, default=1, help="Particles")
    p.add_argument("--dps-weight", dest="dps_weight", type=float, help="DPS guidance weight (default: 1/σ²)")
    p.add_argument("--zeta", choices=["sqrt-alphabar", "one"], help="Guidance step schedule ζ_t")
    p.add_argument("--prior", help=f"Prior YAML name (default: {DEFAULT_PRIOR})")
    p.add_argument("--format", choices=["rtf", "png"], default="rtf")
    p.add_argument("--out", required=True, help="Output directory")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("estimate-kernel", parents=[seeded], help="Kernel M-step with known sharp image(s)")
    p.add_argument("--y", required=True, help="Degraded image")
    p.add_argument("--sharp", required=True, help="Sharp image(s), comma separated")
    p.add_argument("--sigma", type=float, required=True, help="Noise std")
    p.add_argument("--reg", choices=["identity", "l1", "l2", "pnp"], help="Kernel regularizer (default: l2)")
    p.add_argument("--lambda", dest="lam", type=float, help="Regularization weight λ")
    p.add_argument("--beta", type=float, help="HQS coupling β")
    p.add_argument("--iters", type=int, help="HQS iterations J")
    p.add_argument("--ksize", type=int, help="Kernel size")
    p.add_argument("--init", help="Kernel init spec")
    p.add_argument("--weights", help="Denoiser weights for --reg pnp")
    p.add_argument("--out", required=True, help="Output kernel path (RTF1)")
    p.set_defaults(func=cmd_estimate_kernel)

    p = sub.add_parser("train-denoiser", parents=[seeded], help="Train the plug-and-play kernel denoiser")
    p.add_argument("--out", required=True, help="Output weights path (DNW1)")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--dataset-size", type=int, default=256)
    p.set_defaults(func=cmd_train_denoiser)

    p = sub.add_parser("deblur", parents=[seeded], help="Blind deblurring of one image")
    p.add_argument("--y", required=True, help="Degraded image")
    p.add_argument("--sigma", type=float, required=True, help="Noise std")
    p.add_argument("--format", choices=["rtf", "png"], default="rtf")
    p.add_argument("--out", required=True, help="Output directory")
    _add_em_arguments(p)
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("sweep-reg", parents=[seeded], help="Kernel MSE across noise levels and regularizers")
    p.add_argument("--manifest", required=True, help="Dataset manifest.jsonl")
    p.add_argument("--sigmas", required=True, help="Comma separated noise levels")
    p.add_argument("--regs", default="l2,l1", help="Comma separated regularizers")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--lambdas", help="Per-regularizer λ candidates, e.g. l2=1,pnp=2:5:10 (best mean MSE is kept)")
    p.add_argument("--beta", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--weights", help="Denoiser weights for pnp")
    p.add_argument("--out", required=True, help="Output directory")
    p.set_defaults(func=cmd_sweep_reg)

    p = sub.add_parser("benchmark", parents=[seeded], help="Run an algorithm over a dataset manifest")
    p.add_argument("--manifest", required=True, help="Dataset manifest.jsonl")
    p.add_argument("--out", required=True, help="Output directory")
    _add_em_arguments(p)
    p.set_defaults(func=cmd_benchmark)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """メイン関数"""
    parser = build_parser()
    args = parser.parse_args(argv)

    # ログレベル調整
    configure_logging("DEBUG" if args.verbose else None)
    if args.no_progress:
        Config.SHOW_PROGRESS = False

    if not validate_environment():
        return EXIT_USAGE

    try:
        return EXIT_OK if args.func(args) else EXIT_RUNTIME
    except KeyboardInterrupt:
        print("\n👋 Interrupted")
        return EXIT_INTERRUPT
    except (ConfigError, FileNotFoundError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except DiffemError as e:
        print(f"💥 {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logger.error("unexpected_error", error=str(e), exc_info=True)
        print(f"💥 Unexpected error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
