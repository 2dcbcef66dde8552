"""
binsmooth - Generalized Binscatter
Command-Line Application Entry Point
"""

import argparse
import logging
import sys

import numpy as np

# Import core modules
from core.basis import BasisSpec
from core.binselect import select_bins
from core.dataset import load_csv, sort_index
from core.errors import BinscatterError, ConfigurationError
from core.fit import binscatter_dots, evaluate_many, fit_binscatter, fit_residualized
from core import inference
from core.models import parse_model
from core.partition import build_partition
from core.simharness import ExperimentSettings, run_experiment
from utils.config import SUBCOMMANDS, Config, RunConfig
from utils.output_utils import ResultWriter, emit_svg
from utils.validators import CALIBRATIONS, VCE_MODES

logger = logging.getLogger("binsmooth")

# RunConfig fields that simulate passes on to ExperimentSettings
EXPERIMENT_KEYS = (
    "n", "p", "s", "v", "q", "alpha", "draws", "seed", "J", "method", "vce", "grid_size",
    "model", "direction", "calibration",
)


def configure_logging(verbose=False):
    """Configure logging once; everything goes to stderr"""
    level = logging.DEBUG if (verbose or Config.DEBUG_MODE) else getattr(logging, Config.LOG_LEVEL)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def status(message):
    print(message, file=sys.stderr)


def build_parser():
    """Argument parser; every option defaults to None so only given flags override"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with default settings")
    common.add_argument("--verbose", action="store_true", default=None, help="Debug logging")

    data = common.add_argument_group("data")
    data.add_argument("--data", help="CSV file with a header row")
    data.add_argument("--y", help="Response column")
    data.add_argument("--x", help="Regressor column")
    data.add_argument("--w", help="Covariate columns, comma separated")
    data.add_argument("--cluster", help="Cluster column")

    orders = common.add_argument_group("orders")
    orders.add_argument("--p", type=int, help="Polynomial order of the line (default 3)")
    orders.add_argument("--s", type=int, help="Smoothness order of the line (default 3)")
    orders.add_argument("--v", type=int, help="Derivative order (default 0)")
    orders.add_argument("--q", type=int, help="Bias-correction order (default 1)")
    orders.add_argument("--dots-p", dest="dots_p", type=int, help="Polynomial order of the dots")
    orders.add_argument("--dots-s", dest="dots_s", type=int, help="Smoothness order of the dots")

    bins = common.add_argument_group("bins")
    bins.add_argument("--J", dest="J", type=int, help="Number of bins (skips selection)")
    bins.add_argument("--J-pre", dest="J_pre", type=int, help="Preliminary J for the DPI selector")
    bins.add_argument("--method", choices=("rot", "dpi"), help="Bin selector (default rot)")

    infer = common.add_argument_group("inference")
    infer.add_argument("--alpha", type=float, help="Significance level")
    infer.add_argument("--draws", type=int, help="Gaussian simulation draws")
    infer.add_argument("--seed", type=int, help="Master seed")
    infer.add_argument("--vce", choices=VCE_MODES, help="Variance estimator (default hc2)")
    infer.add_argument("--calibration", choices=CALIBRATIONS,
                       help="Band and test calibration (default satterthwaite)")
    infer.add_argument("--model", help="Parametric model: linear, quadratic, poly<k>, ...")
    infer.add_argument("--coefficients", help="Coefficients for --model user, comma separated")
    infer.add_argument("--direction", choices=("le", "ge"), help="Shape test direction")
    infer.add_argument("--grid-size", dest="grid_size", type=int, help="Evaluation grid size")

    sim = common.add_argument_group("simulation")
    sim.add_argument("--experiment", help="Experiment kind")
    sim.add_argument("--reps", type=int, help="Replications")
    sim.add_argument("--n", type=int, help="Simulated sample size")
    sim.add_argument("--threads", type=int, help="Worker threads (capped at BINSMOOTH_THREADS)")

    out = common.add_argument_group("output")
    out.add_argument("--out", help="JSON result file (default stdout)")
    out.add_argument("--csv", help="CSV export of the evaluation grid")
    out.add_argument("--svg", help="SVG plot")

    parser = argparse.ArgumentParser(
        prog="binsmooth",
        description="Binscatter estimation, bin selection, confidence bands and tests",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def parse_config(argv=None):
    """
    Parse the command line into a RunConfig

    Returns:
        tuple: (RunConfig, verbose)
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if e.code == 0:
            raise
        raise ConfigurationError("Invalid command line") from e
    values = vars(args)
    toml_path = values.pop("config")
    verbose = bool(values.pop("verbose"))
    return RunConfig.from_sources(values, toml_path), verbose


# Pipeline steps


def _select(config, data):
    """
    Number of bins for the canonical dots (given J or IMSE-optimal)

    Returns:
        tuple: (J, selection dict)
    """
    if config.J is not None:
        return config.J, {'J': config.J, 'method': "user"}
    J, consts = select_bins(data, config.dots_p, config.dots_s, 0, config.method, config.J_pre)
    return J, {'J': J, **consts.as_dict()}


def _dots(data, part, config):
    dots_fit = fit_binscatter(
        data, BasisSpec(p=config.dots_p, s=config.dots_s, v=0, partition=part)
    )
    return dots_fit, [{'x': x0, 'y': y0} for x0, y0 in binscatter_dots(dots_fit)]


def _line(data, part, config, points):
    """Order-p line at the given points; level curves carry the w_bar'gamma shift of the dots"""
    spec = BasisSpec(p=config.p, s=config.s, v=config.v, partition=part)
    line_fit = fit_binscatter(data, spec)
    shift = line_fit.dots_shift if config.v == 0 else 0.0
    mu = evaluate_many(line_fit, points, config.v) + shift
    return line_fit, {
        'grid': points, 'mu': mu, 'p': config.p, 's': config.s, 'v': config.v, 'shift': shift,
    }


def _inference_block(grid, rbc, v):
    shift = rbc.fit.dots_shift if v == 0 else 0.0
    block = grid.as_dict()
    block.update(
        p=rbc.spec.p, s=rbc.spec.s, shift=shift,
        mu=(grid.mu + shift).tolist(),
    )
    if grid.lower is not None:
        block.update(ci_lower=(grid.lower + shift).tolist(), ci_upper=(grid.upper + shift).tolist())
    return block, shift


def _model_curve(model, data, points, v):
    fitted = model.fit(data)
    m = fitted.evaluate(points, v)
    if v == 0 and data.d:
        m = m + data.w.mean(axis=0) @ fitted.gamma
    return {'family': fitted.family, 'm': m, **fitted.describe()}


def _base(config):
    """Steps shared by every data subcommand: load, select J, partition, dots"""
    data = load_csv(config.data, config.y, config.x, config.w, config.cluster)
    status(f"✅ Loaded {data.n} rows ({data.d} covariates)")
    sort = sort_index(data)
    J, selection = _select(config, data)
    part = build_partition(data, sort, J)
    _, dots = _dots(data, part, config)
    result = {
        'subcommand': config.subcommand,
        'config': config.as_dict(),
        'data': {**data.summary(), 'drop_report': data.drop_report},
        'selection': selection,
        'partition': part.as_dict(),
        'dots': dots,
        'labels': {'x': config.x, 'y': config.y},
    }
    return data, sort, part, result


def _model(config):
    return parse_model(config.model, config.coefficients) if config.model else None


def run_fit(config):
    """Steps 1 and 2: canonical dots and the spline line on the same partition"""
    data, _, part, result = _base(config)
    points = inference.build_grid(part, config.s, config.grid_size)
    line_fit, line = _line(data, part, config, points)
    result['line'] = line
    result['coefficients'] = {
        'beta': line_fit.beta, 'gamma': line_fit.gamma, 'w_names': list(data.w_names),
    }
    result['metadata'] = line_fit.metadata()
    model = _model(config)
    if model is not None:
        result['model_curve'] = _model_curve(model, data, points, config.v)
    return result


def _rbc(config, data, sort, part):
    return inference.bias_corrected_fit(
        data, config.p, config.s, config.v, config.q, part.J, config.vce, sort, part,
    )


def run_band(config):
    """Steps 1 to 4: dots, line, uniform band and optional parametric overlay"""
    data, sort, part, result = _base(config)
    rbc = _rbc(config, data, sort, part)
    band = inference.confidence_band(
        data, config.p, config.s, config.v, config.q, config.alpha, part.J, config.draws,
        config.seed, config.vce, config.grid_size, config.threads, rbc,
        calibration=config.calibration,
    )
    line_fit, result['line'] = _line(data, part, config, band.grid.points)
    result['inference'], shift = _inference_block(band.grid, rbc, config.v)
    result['band'] = {
        **band.as_dict(),
        'lower': band.lower + shift,
        'upper': band.upper + shift,
    }
    result['metadata'] = {**line_fit.metadata(), 'inference': rbc.fit.metadata()}
    model = _model(config)
    if model is not None:
        result['model_curve'] = _model_curve(model, data, band.grid.points, config.v)
    status(f"✅ Band critical value {band.cv:.4f}")
    return result


def _test_result(config, data, part, rbc, test, result):
    line_fit, result['line'] = _line(data, part, config, test.grid.points)
    result['inference'], _ = _inference_block(test.grid, rbc, config.v)
    result['test'] = test.as_dict()
    result['metadata'] = {**line_fit.metadata(), 'inference': rbc.fit.metadata()}
    verdict = "rejected" if test.reject else "not rejected"
    status(f"✅ T={test.statistic:.4f}, cv={test.cv:.4f}, p={test.p_value:.4f}: H0 {verdict}")
    return result


def run_test_spec(config):
    data, sort, part, result = _base(config)
    rbc = _rbc(config, data, sort, part)
    model = _model(config)
    test = inference.test_specification(
        data, config.p, config.s, config.v, config.q, config.alpha, part.J, model,
        config.draws, config.seed, config.vce, config.grid_size, config.threads, rbc,
        calibration=config.calibration,
    )
    result['model_curve'] = _model_curve(model, data, test.grid.points, config.v)
    return _test_result(config, data, part, rbc, test, result)


def run_test_shape(config):
    data, sort, part, result = _base(config)
    rbc = _rbc(config, data, sort, part)
    model = _model(config)
    test = inference.test_shape(
        data, config.p, config.s, config.v, config.q, config.alpha, part.J, config.direction,
        config.draws, config.seed, model, config.vce, config.grid_size, config.threads, rbc,
        calibration=config.calibration,
    )
    if model is not None:
        result['model_curve'] = _model_curve(model, data, test.grid.points, config.v)
    return _test_result(config, data, part, rbc, test, result)


def run_select_bins(config):
    """J for (p, s, v) with both IMSE constants, plus the partition it implies"""
    data = load_csv(config.data, config.y, config.x, config.w, config.cluster)
    if config.J is not None:
        J, selection = config.J, {'J': config.J, 'method': "user"}
    else:
        J, consts = select_bins(data, config.p, config.s, config.v, config.method, config.J_pre)
        selection = {'J': J, **consts.as_dict()}
    part = build_partition(data, sort_index(data), J)
    status(f"✅ Selected J={part.J}")
    return {
        'subcommand': config.subcommand,
        'config': config.as_dict(),
        'selection': selection,
        'partition': part.as_dict(),
    }


def run_compare_covadj(config):
    """Semi-linear versus residualized dots on the same number of bins"""
    data, _, part, result = _base(config)
    residualized = fit_residualized(
        data, BasisSpec(p=0, s=0, v=0, partition=part),
    )
    result['residualized_dots'] = [
        {'x': x0, 'y': y0} for x0, y0 in binscatter_dots(residualized)
    ]
    result['residualized_partition'] = residualized.partition.as_dict()
    result['metadata'] = {'residualized': residualized.metadata()}
    return result


def run_simulate(config):
    overrides = {k: getattr(config, k) for k in EXPERIMENT_KEYS if k in config.explicit}
    settings = ExperimentSettings.for_kind(config.experiment, **overrides)
    reps = config.reps
    outcome = run_experiment(config.experiment, reps, settings, threads=config.threads)
    status(f"✅ {config.experiment}: {outcome['rates']}")
    return outcome


HANDLERS = {
    'fit': run_fit,
    'band': run_band,
    'test-spec': run_test_spec,
    'test-shape': run_test_shape,
    'select-bins': run_select_bins,
    'simulate': run_simulate,
    'compare-covadj': run_compare_covadj,
}


def run(config):
    """
    Execute one subcommand and write its result files

    Args:
        config: RunConfig

    Returns:
        int: exit status (0 success, 2 configuration, 3 data, 4 numerical failure)
    """
    try:
        config.validate()
        result = HANDLERS[config.subcommand](config)

        if config.out:
            ResultWriter.write_json(result, config.out)
            status(f"✅ Results written to {config.out}")
        else:
            sys.stdout.write(ResultWriter.to_json(result))
        if config.csv:
            if 'line' not in result:
                status(f"⚠️ {config.subcommand} has no evaluation grid; --csv ignored")
            else:
                ResultWriter.write_csv(result, config.csv)
        if config.svg:
            if 'dots' not in result:
                status(f"⚠️ {config.subcommand} has nothing to plot; --svg ignored")
            else:
                emit_svg(result, config.svg)
        return 0

    except BinscatterError as e:
        logger.debug("Failure details: %s", e.details)
        status(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as e:
        status(f"❌ Numerical failure: {e}")
        return 4


def main(argv=None):
    """Main application function"""
    try:
        config, verbose = parse_config(argv)
    except ConfigurationError as e:
        configure_logging()
        status(f"❌ {e}")
        return e.exit_code
    configure_logging(verbose)

    _, env_errors = Config.validate_config()
    for message in env_errors:
        status(f"⚠️ {message}")
    logger.debug("Environment: %s", Config.get_config_summary())
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
