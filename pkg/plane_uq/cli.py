"""
Command Line Interface for the plane UQ toolkit.
Provides commands for fixture synthesis, calibration, reporting, conformal sets,
selective decisions and explanation bundles.

Exit codes: 0 success, 1 computation error, 2 input or validation error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pydantic
from colorama import Fore, Style

from uqlib.core import PassKind, ValidationError, atomic_write_text
from uqlib.selective import ConfidenceSource

from .models import (
    CalibrateConfig,
    ExplainConfig,
    ReportConfig,
    ScoreKind,
    SynthConfig,
    report_schema,
)
from .pipeline_manager import PipelineConfig, PlanePipeline, ScoreSource
from .tensor_io import load_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVALID = 2


def setup_logging(level: str = "INFO"):
    """Set up logging configuration."""
    logging.basicConfig(
        level=getattr(logging, level.upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )


def _ok(message: str) -> None:
    print(f"{Fore.GREEN}✓{Style.RESET_ALL} {message}")


def _fail(what: str, e: Exception) -> int:
    invalid = isinstance(e, (ValidationError, pydantic.ValidationError))
    logger.error(f"{what} failed: {e}")
    print(f"{Fore.RED}✗{Style.RESET_ALL} {what} failed: {e}")
    return EXIT_INVALID if invalid else EXIT_ERROR


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--seed', type=int, required=True, help='Random seed (mandatory)')
    parser.add_argument('--out', required=True, help='Output directory')
    parser.add_argument('--config', help='JSON config file; flags override its values')


def _add_score_inputs(parser: argparse.ArgumentParser) -> None:
    scores = parser.add_mutually_exclusive_group()
    scores.add_argument('--probabilities', help='N x K probability tensor (.npy)')
    scores.add_argument('--logits', help='N x K logit tensor (.npy)')
    scores.add_argument('--passes', help='T x N x K pass stack (.npy)')
    parser.add_argument('--pass-kind', choices=[k.value for k in PassKind], default=PassKind.LOGITS.value,
                        help='What the pass stack holds (default: logits)')
    parser.add_argument('--manifest', help='CSV manifest (sample_id,label,row[,groups...])')
    parser.add_argument('--splits', help='JSON calibration/evaluation splits')
    parser.add_argument('--calibration', help='Calibration artifact from the calibrate command')
    parser.add_argument('--alpha', type=float, help='Conformal miscoverage level (default: 0.1)')
    parser.add_argument('--randomized', action='store_true', default=None,
                        help='Randomized conformal sets drawn from --seed (default: deterministic)')
    parser.add_argument('--target-risk', type=float, help='Target selective risk (default: 0.05)')
    parser.add_argument('--threshold', type=float, help='Fixed confidence threshold')
    parser.add_argument('--confidence-source', choices=[s.value for s in ConfidenceSource],
                        help='Confidence statistic for selective decisions')
    parser.add_argument('--group-by', help='Manifest column to stratify on')
    parser.add_argument('--bins', type=int, help='Reliability bins (default: 15)')


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    parser = argparse.ArgumentParser(
        prog='plane-uq',
        description="Plane UQ toolkit - calibrated, explainable plane classification reports",
        formatter_class=argparse.RawDescriptionHelpFormatter
    )

    parser.add_argument(
        '--log-level',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        default='INFO',
        help='Set the logging level (default: INFO)'
    )
    parser.add_argument('--progress', action='store_true', help='Show progress bars')

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    # Synth command
    synth_parser = subparsers.add_parser('synth', help='Generate a synthetic fixture directory')
    _add_common(synth_parser)
    synth_parser.add_argument('--n-samples', type=int, help='Number of samples (N)')
    synth_parser.add_argument('--num-classes', type=int, help='Number of classes (K)')
    synth_parser.add_argument('--num-passes', type=int, help='Stochastic passes (T)')
    synth_parser.add_argument('--miscalibration', type=float, help='Logit scale c of the observed logits')
    synth_parser.add_argument('--pass-noise', type=float, help='Per-pass logit noise std')
    synth_parser.add_argument('--image-size', type=int, help='Square image side')
    synth_parser.add_argument('--cell', type=int, help='Grid superpixel side')

    # Calibrate command
    cal_parser = subparsers.add_parser('calibrate', help='Fit a temperature on the calibration split')
    _add_common(cal_parser)
    cal_parser.add_argument('--logits', required=True, help='N x K logit tensor (.npy)')
    cal_parser.add_argument('--manifest', required=True, help='CSV manifest')
    cal_parser.add_argument('--splits', required=True, help='JSON calibration/evaluation splits')
    cal_parser.add_argument('--bins', type=int, help='Reliability bins (default: 15)')

    # Report command
    report_parser = subparsers.add_parser('report', help='Write the metrics report bundle')
    _add_common(report_parser)
    _add_score_inputs(report_parser)
    report_parser.add_argument('--examples', type=int, help='Example cases per category (default: 3)')

    # Conformal command
    conformal_parser = subparsers.add_parser('conformal', help='Split-conformal prediction sets')
    _add_common(conformal_parser)
    _add_score_inputs(conformal_parser)
    conformal_parser.add_argument('--simulate', type=int, metavar='N_SEEDS',
                                  help='Run the exchangeable coverage experiment instead')
    conformal_parser.add_argument('--sim-classes', type=int, default=6, help='Classes in the simulation')
    conformal_parser.add_argument('--sim-cal', type=int, default=500, help='Calibration size in the simulation')
    conformal_parser.add_argument('--sim-test', type=int, default=5000, help='Test size in the simulation')

    # Select command
    select_parser = subparsers.add_parser('select', help='Selective accept/escalate decisions')
    _add_common(select_parser)
    _add_score_inputs(select_parser)

    # Explain command
    explain_parser = subparsers.add_parser('explain', help='LIME explanation bundle for one image')
    _add_common(explain_parser)
    explain_parser.add_argument('--images', required=True, help='M x H x W image tensor (.npy)')
    explain_parser.add_argument('--image-index', type=int, help='Image to explain (default: 0)')
    explain_parser.add_argument('--oracle', required=True, help='Oracle spec JSON')
    seg_group = explain_parser.add_mutually_exclusive_group()
    seg_group.add_argument('--segmentation', help='H x W integer superpixel map (.npy)')
    seg_group.add_argument('--cell', type=int, help='Grid superpixel side (default: 8)')
    explain_parser.add_argument('--class', dest='class_index', type=int, help='Explained class')
    explain_parser.add_argument('--saliency', help='D x H x W saliency stack (.npy)')
    u_group = explain_parser.add_mutually_exclusive_group()
    u_group.add_argument('--u-tilde', type=float, help='Normalized uncertainty in [0, 1]')
    u_group.add_argument('--passes', help='T x N x K pass stack to derive u from')
    explain_parser.add_argument('--pass-kind', choices=[k.value for k in PassKind], default=PassKind.LOGITS.value,
                                help='What the pass stack holds (default: logits)')
    explain_parser.add_argument('--sample-index', type=int, help='Pass-stack sample of the image')
    explain_parser.add_argument('--n-samples', type=int, help='LIME perturbations per run')
    explain_parser.add_argument('--n-repeats', type=int, help='LIME repeats (default: 10)')
    explain_parser.add_argument('--workers', type=int, help='Oracle worker threads')

    # Schema command
    schema_parser = subparsers.add_parser('schema', help='Write the report JSON schema')
    schema_parser.add_argument('--out', required=True, help='Output directory')

    return parser


def _report_config(args) -> ReportConfig:
    return load_config(
        ReportConfig,
        args.config,
        {
            'alpha': args.alpha,
            'randomized': args.randomized,
            'target_risk': args.target_risk,
            'threshold': args.threshold,
            'confidence_source': args.confidence_source,
            'group_by': args.group_by,
            'bins': args.bins,
            'n_examples': getattr(args, 'examples', None),
        },
    )


def _score_source(args) -> ScoreSource:
    for kind in ScoreKind:
        path = getattr(args, kind.value)
        if path is not None:
            break
    else:
        raise ValidationError("one of --probabilities, --logits or --passes is required")
    if args.manifest is None or args.splits is None:
        raise ValidationError("--manifest and --splits are required")
    return ScoreSource(kind, Path(path), PassKind(args.pass_kind))


def cmd_synth(args, pipeline: PlanePipeline) -> int:
    """Handle synth command."""
    try:
        config = load_config(
            SynthConfig,
            args.config,
            {
                'n_samples': args.n_samples,
                'num_classes': args.num_classes,
                'num_passes': args.num_passes,
                'miscalibration': args.miscalibration,
                'pass_noise': args.pass_noise,
                'image_size': args.image_size,
                'cell': args.cell,
            },
        )
        written = pipeline.synth(config, args.seed, args.out)
        _ok(f"Synthetic fixture written to {args.out}")
        print(f"  Files: {len(written)}")
        print(f"  N={config.n_samples}, K={config.num_classes}, T={config.num_passes}, c={config.miscalibration}")
    except Exception as e:
        return _fail("Synthesis", e)
    return EXIT_OK


def cmd_calibrate(args, pipeline: PlanePipeline) -> int:
    """Handle calibrate command."""
    try:
        config = load_config(CalibrateConfig, args.config, {'bins': args.bins})
        artifact = pipeline.calibrate(
            config, args.seed, args.out, Path(args.logits), Path(args.manifest), Path(args.splits)
        )
        _ok(f"Temperature T* = {artifact.temperature:.4f} ({artifact.n_calibration} calibration samples)")
        print(f"  NLL: {artifact.nll_before:.4f} -> {artifact.nll_after:.4f}")
        print(f"  ECE: {artifact.ece_before:.4f} -> {artifact.ece_after:.4f}")
    except Exception as e:
        return _fail("Calibration", e)
    return EXIT_OK


def cmd_report(args, pipeline: PlanePipeline) -> int:
    """Handle report command."""
    try:
        config = _report_config(args)
        report = pipeline.report(
            config,
            args.seed,
            args.out,
            _score_source(args),
            Path(args.manifest),
            Path(args.splits),
            None if args.calibration is None else Path(args.calibration),
        )
        _ok(f"Report written to {args.out}")
        print(f"  Top-1 accuracy: {report.accuracy['top1_accuracy']:.4f}")
        print(f"  Macro F1: {report.accuracy['macro_f1']:.4f}")
        print(f"  Conformal coverage: {report.conformal['evaluation']['coverage']:.4f}")
        print(f"  Abstention rate: {report.selective_prediction['policy']['abstention_rate']:.4f}")
    except Exception as e:
        return _fail("Report", e)
    return EXIT_OK


def cmd_conformal(args, pipeline: PlanePipeline) -> int:
    """Handle conformal command."""
    try:
        config = _report_config(args)
        if args.simulate is not None:
            if args.simulate < 1:
                raise ValidationError("--simulate needs at least one seed")
            result = pipeline.simulate(
                config, args.seed, args.out, args.simulate, args.sim_classes, args.sim_cal, args.sim_test
            )
            _ok(f"Simulated {args.simulate} seeds: mean coverage {result['mean_coverage']:.4f}")
            return EXIT_OK
        result = pipeline.conformal(
            config,
            args.seed,
            args.out,
            _score_source(args),
            Path(args.manifest),
            Path(args.splits),
            None if args.calibration is None else Path(args.calibration),
        )
        section = result['conformal']
        _ok(f"Conformal qhat = {section['qhat']:.4f} (alpha = {section['alpha']})")
        print(f"  Coverage: {section['evaluation']['coverage']:.4f}")
        print(f"  Mean set size: {section['evaluation']['mean_size']:.3f}")
    except Exception as e:
        return _fail("Conformal", e)
    return EXIT_OK


def cmd_select(args, pipeline: PlanePipeline) -> int:
    """Handle select command."""
    try:
        config = _report_config(args)
        result = pipeline.select(
            config,
            args.seed,
            args.out,
            _score_source(args),
            Path(args.manifest),
            Path(args.splits),
            None if args.calibration is None else Path(args.calibration),
        )
        policy = result['policy']
        if policy['abstain_all']:
            print(f"{Fore.YELLOW}!{Style.RESET_ALL} No threshold meets the target risk; escalating every sample")
        else:
            _ok(f"Threshold {policy['threshold']:.4f}: coverage {policy['coverage']:.4f}")
        print(f"  Abstention rate: {policy['abstention_rate']:.4f}")
    except Exception as e:
        return _fail("Selection", e)
    return EXIT_OK


def cmd_explain(args, pipeline: PlanePipeline) -> int:
    """Handle explain command."""
    try:
        config = load_config(
            ExplainConfig,
            args.config,
            {
                'image_index': args.image_index,
                'class_index': args.class_index,
                'cell': args.cell,
                'u_tilde': args.u_tilde,
                'lime': {
                    'n_samples': args.n_samples,
                    'n_repeats': args.n_repeats,
                    'max_workers': args.workers,
                },
            },
        )
        summary = pipeline.explain(
            config,
            args.seed,
            args.out,
            Path(args.images),
            Path(args.oracle),
            segmentation_path=None if args.segmentation is None else Path(args.segmentation),
            saliency_path=None if args.saliency is None else Path(args.saliency),
            passes_path=None if args.passes is None else Path(args.passes),
            sample_index=args.sample_index,
            pass_kind=PassKind(args.pass_kind),
        )
        _ok(f"Explanation bundle written to {args.out}")
        print(f"  Class: {summary['class_index']}")
        print(f"  Top superpixels: {summary['top_regions']['by_mean_weight']}")
        if summary['reliability_weighted']:
            print(f"  Reliability-weighted with u = {summary['u_tilde']:.4f}")
    except Exception as e:
        return _fail("Explanation", e)
    return EXIT_OK


def cmd_schema(args) -> int:
    """Handle schema command."""
    try:
        path = Path(args.out) / "report.schema.json"
        atomic_write_text(path, json.dumps(report_schema(), sort_keys=True, indent=2) + "\n")
        _ok(f"Report schema written to {path}")
    except Exception as e:
        return _fail("Schema export", e)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    parser = create_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_ERROR

    # Set up logging
    setup_logging(args.log_level)

    try:
        pipeline = PlanePipeline(PipelineConfig(progress=args.progress))

        # Dispatch to command handlers
        if args.command == 'synth':
            return cmd_synth(args, pipeline)
        elif args.command == 'calibrate':
            return cmd_calibrate(args, pipeline)
        elif args.command == 'report':
            return cmd_report(args, pipeline)
        elif args.command == 'conformal':
            return cmd_conformal(args, pipeline)
        elif args.command == 'select':
            return cmd_select(args, pipeline)
        elif args.command == 'explain':
            return cmd_explain(args, pipeline)
        elif args.command == 'schema':
            return cmd_schema(args)
        else:
            print(f"Unknown command: {args.command}")
            return EXIT_ERROR

    except Exception as e:
        logger.error(f"CLI failed: {e}")
        print(f"✗ CLI failed: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
