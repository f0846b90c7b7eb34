import argparse
import asyncio
from pathlib import Path

from src.routes.deps import Reply
from src.schemas import BenchFunction
from src.services import bench
from src.services.network import load_topology


async def _run(args: argparse.Namespace):
    scenario = bench.scenario(args.function, args.rate, args.total, args.warmup)
    async with bench.fresh_network(load_topology(args.topology)) as network:
        await network.health_check()
        return await bench.run_scenario(scenario, network, args.out)


def run(args: argparse.Namespace) -> Reply:
    """
    The run function measures one function at one rate on a fresh in-process network.

    :param args: argparse.Namespace: --topology, --function, --rate, --total, --warmup and --out
    :return: The report
    """
    report = asyncio.run(_run(args))
    result = report.result
    return Reply(report, f'{result.function.value} @ {result.send_rate_tps:g} TPS: '
                         f'{result.succeeded}/{result.submitted} ok, avg latency {result.avg_latency:.3f} s, '
                         f'throughput {result.throughput:.2f} TPS')


def suite(args: argparse.Namespace) -> Reply:
    report = asyncio.run(bench.run_suite(load_topology(args.topology), args.out, rates=args.rates,
                                         total_tx=args.total, warmup_tx=args.warmup))
    return Reply(report, report.table)


def register(subparsers) -> None:
    parser = subparsers.add_parser('bench', help='fixed-rate benchmarks of the contract functions')
    commands = parser.add_subparsers(dest='command', required=True)

    cmd = commands.add_parser('run', help='one function at one rate')
    cmd.add_argument('--topology', type=Path, required=True, help='topology of the fresh network')
    cmd.add_argument('--function', required=True, choices=[f.value for f in BenchFunction])
    cmd.add_argument('--rate', type=float, required=True, help='send rate in TPS')
    cmd.add_argument('--total', type=int, default=bench.SUITE_TOTAL, help='measured transactions')
    cmd.add_argument('--warmup', type=int, help='unmeasured transactions sent first')
    cmd.add_argument('--out', type=Path, help='report file')
    cmd.set_defaults(handler=run)

    cmd = commands.add_parser('suite', help='every function at every rate, each on a fresh network')
    cmd.add_argument('--topology', type=Path, required=True, help='topology of the fresh networks')
    cmd.add_argument('--out', type=Path, required=True, help='report directory')
    cmd.add_argument('--rates', type=float, nargs='+', default=list(bench.SUITE_RATES))
    cmd.add_argument('--total', type=int, default=bench.SUITE_TOTAL)
    cmd.add_argument('--warmup', type=int)
    cmd.set_defaults(handler=suite)
