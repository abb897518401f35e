import argparse
import dataclasses
import logging
import os
import sys

from scalemix_sim import pipelines
from scalemix_sim.config import load_config
from scalemix_sim.nn.network import NetworkModel
from scalemix_sim.panel import Scale, ingest
from scalemix_sim.tail import chi_grid

logger = logging.getLogger('scalemix_sim')

EXIT_OK = 0
EXIT_USER = 1
EXIT_NUMERICAL = 2


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """Usage problems exit with the user-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, "%s: error: %s\n" % (self.prog, message))


def build_parser():
    parser = ArgumentParser(prog="scalemix-sim",
                            description="Simulate and fit space-time random scale mixtures of extreme rainfall")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output root (overrides the config)")
    common.add_argument("--threads", type=int, help="parallel workers (overrides the config)")
    common.add_argument("--verbose", action="store_true", help="debug logging")
    common.add_argument("--variant", help="copula variant M1..M8 (overrides the config)")
    common.add_argument("--delta", type=float, help="delta (overrides the config)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--stations", help="stations CSV (site_id,x_km,y_km)")
    data.add_argument("--values", help="values CSV (site_id,year,day_index,value)")
    data.add_argument("--uniform", action="store_true", help="values are already on the uniform scale")
    data.add_argument("--fixture", action="store_true", help="use the bundled synthetic station panel")

    commands = parser.add_subparsers(dest="command", metavar="command", parser_class=ArgumentParser)
    commands.required = True
    commands.add_parser("simulate", parents=[common], help="simulate a station panel from the configured model")
    commands.add_parser("train", parents=[common, data], help="train the estimator network on the panel layout")
    fit = commands.add_parser("fit", parents=[common, data], help="two-step fit with bootstrap intervals")
    fit.add_argument("--network", help="trained network JSON; trained from scratch when absent")
    boot = commands.add_parser("bootstrap", parents=[common, data],
                               help="fit with a trained network, then bootstrap at the estimates")
    boot.add_argument("--network", required=True, help="trained network JSON")
    select = commands.add_parser("select", parents=[common, data], help="cross-validated model selection")
    select.add_argument("--candidates", nargs="+", help="variants to compare (default from config)")
    commands.add_parser("diagnose", parents=[common, data], help="chi grids, bands, site GPD fits, chi*")
    verify = commands.add_parser("verify-classes", parents=[common],
                                 help="Monte-Carlo dependence classes of a variant")
    verify.add_argument("--mode", choices=("space", "time", "spacetime"), action="append",
                        help="restrict to one mode (repeatable)")
    commands.add_parser("storm", parents=[common], help="simulate a multi-day storm on a lattice")
    return parser


class Simulator:
    def __init__(self, args):
        self.args = args
        config = load_config(args.config)
        config = config.with_overrides(seed=args.seed, output_dir=args.out, n_jobs=args.threads)
        copula = dataclasses.replace(config.copula, **{k: v for k, v in (("variant", args.variant),
                                                                          ("delta", args.delta)) if v is not None})
        self.config = dataclasses.replace(config, copula=copula).validate()

    def load_data(self):
        args = self.args
        if args.fixture:
            return pipelines.make_fixture()
        if not (args.stations and args.values):
            raise UsageError("this command needs --stations and --values, or --fixture")
        return ingest(args.stations, args.values, Scale.UNIFORM if args.uniform else Scale.DATA)

    def output(self):
        return pipelines.versioned_dir(self.config.output_dir, self.args.command)

    def run(self):
        handler = getattr(self, "do_" + self.args.command.replace("-", "_"))
        return handler()

    def do_simulate(self):
        uniform, data = pipelines.simulate_panels(self.config)
        out = self.output()
        data.export_csv(os.path.join(out, "stations.csv"), os.path.join(out, "values.csv"))
        uniform.to_frames()[1].to_csv(os.path.join(out, "uniform_values.csv"), index=False, float_format="%.17g")
        chi_grid(uniform.censored(self.config.marginal.p), self.config.grid).to_csv(os.path.join(out, "chi_grid.csv"))
        logger.info("Simulated %d years x %d days x %d sites into %s", data.n_years, data.n_days, data.n_sites, out)

    def do_train(self):
        data = self.load_data()
        pipelines.pipeline_train(self.config, data, out=self.output())

    def do_fit(self):
        data = self.load_data()
        network = NetworkModel.load(self.args.network) if self.args.network else None
        report = pipelines.pipeline_fit(self.config, data, network=network, out=self.output())
        for name, values in sorted(report["parameters"].items()):
            logger.info("%s: %s", name, values)

    def do_bootstrap(self):
        data = self.load_data()
        network = NetworkModel.load(self.args.network)
        out = self.output()
        # margins and copula are fitted first; the bootstrap resamples at those estimates
        report = pipelines.pipeline_fit(self.config, data, network=network, out=out)
        pipelines.write_json(os.path.join(out, "bootstrap.json"),
                             {"parameters": report["parameters"], **report["bootstrap"]})

    def do_select(self):
        data = self.load_data()
        report = pipelines.pipeline_model_select(self.config, data, candidates=self.args.candidates,
                                                 out=self.output())
        logger.info("Best model by mean chi-grid RMSE: %s", report["best"])

    def do_diagnose(self):
        data = self.load_data()
        pipelines.pipeline_diagnose(self.config, data, spec=self.config.copula.to_spec(), out=self.output())

    def do_verify_classes(self):
        modes = tuple(self.args.mode) if self.args.mode else ("space", "time", "spacetime")
        report = pipelines.pipeline_verify(self.config, self.config.copula.to_spec(), modes=modes,
                                           out=self.output())
        for mode, result in sorted(report["modes"].items()):
            logger.info("%s: %s (expected %s)", mode, result["verdict"], result["expected"])

    def do_storm(self):
        config = self.config
        pipelines.pipeline_storm(config, config.copula.to_spec(), config.marginal.threshold_plane,
                                 config.marginal.sigma, config.marginal.xi, out=self.output())


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stdout, level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        Simulator(args).run()
    except UsageError as exc:
        print("%s: %s" % (args.command, exc), file=sys.stderr)
        return EXIT_USER
    except ArithmeticError as exc:
        print("%s failed in stage %s: %s" % (args.command, getattr(exc, "stage", args.command), exc),
              file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print("%s failed in stage %s: %s" % (args.command, getattr(exc, "stage", args.command), exc),
              file=sys.stderr)
        return EXIT_USER
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
