"""
Fixed-rate load harness for the contract functions.

Transactions are issued open-loop: submission i is scheduled at start + i / send_rate on a
monotonic clock, regardless of how earlier submissions are doing.
"""
from __future__ import annotations

import asyncio
import contextlib
import functools
import logging
import secrets
import statistics
import tempfile
import time
from collections.abc import AsyncIterator, Callable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from src.conf.config import settings
from src.exceptions import ConfigError, DbcAbacError, FixtureError
from src.schemas import (BenchFunction, BenchReport, BenchScenario, ContractName, FunctionReport, Identity,
                         ObjectRef, Operation, Policy, PolicySelector, Proposal, RoleClass, SubjectAttributes,
                         SuiteReport, Topology, TxValidationCode)
from src.services import abac, canonical
from src.services.edge import EdgeNode, access_body
from src.services.gateway import new_proposal
from src.services.identity import load_identity
from src.services.network import Network, admin_identity_path, init_network, network_dir_of

logger = logging.getLogger(__name__)

SUITE_FUNCTIONS = tuple(BenchFunction)
SUITE_RATES = (5.0, 50.0)
SUITE_TOTAL = 100
TABLE_METRICS = ('avg_latency', 'throughput')

ProposalFactory = Callable[[], Proposal]


def deferred(identity: Identity, contract: ContractName, function: str, args: list) -> ProposalFactory:
    return functools.partial(new_proposal, identity, contract, function, args)


def scenario(function: str, send_rate_tps: float, total_tx: int, warmup_tx: Optional[int] = None) -> BenchScenario:
    """
    The scenario function builds a scenario, reporting bad values as ConfigError.

    :param function: str: Contract function under load
    :param send_rate_tps: float: Offered rate
    :param total_tx: int: Measured transactions
    :param warmup_tx: Optional[int]: Unmeasured transactions sent first
    :return: The scenario
    """
    try:
        return BenchScenario(function=function, send_rate_tps=send_rate_tps, total_tx=total_tx,
                             warmup_tx=settings.bench_warmup_tx if warmup_tx is None else warmup_tx)
    except ValidationError as err:
        raise ConfigError(f'invalid bench scenario: {err}')


@dataclass
class Sample:
    submitted_at: float
    completed_at: float
    ok: bool


class Fixture:
    """Identities and pre-seeded state that make every generated transaction valid."""

    def __init__(self, network: Network, edge: EdgeNode, admin: Identity, user: Identity, run_id: str):
        self.network = network
        self.edge = edge
        self.admin = admin
        self.user = user
        self.run_id = run_id

    @classmethod
    def enroll(cls, network: Network, domain_id: Optional[str] = None) -> 'Fixture':
        domain = network.config.domain(domain_id) if domain_id else network.config.domains[0]
        if domain is None:
            raise ConfigError(f'unknown bench domain {domain_id}')
        registrar = load_identity(admin_identity_path(network_dir_of(network.config), domain.org_id))
        run_id = secrets.token_hex(3)
        try:
            admin = network.enroll_member(
                registrar, domain.org_id, f'bench-admin-{run_id}', RoleClass.local_admin,
                SubjectAttributes(user_id=f'bench-admin-{run_id}', role='admin', domain_id=domain.domain_id))
            user = network.enroll_member(
                registrar, domain.org_id, f'bench-user-{run_id}', RoleClass.user,
                SubjectAttributes(user_id=f'bench-user-{run_id}', role='doctor', domain_id=domain.domain_id))
        except DbcAbacError as err:
            raise FixtureError(f'cannot enroll bench identities: {err.message}')
        return cls(network, network.edge(domain.domain_id), admin, user, run_id)

    def policy(self, index: int, read: int = 1) -> Policy:
        now = int(time.time())
        return Policy.parse_obj({
            'sa': self.user.certificate.attributes.dict(),
            'oa': {'device_id': f'bench-{self.run_id}-{index}', 'domain_id': self.edge.domain_id,
                   'owner_ids': [self.user.certificate.attributes.user_id], 'data_type': 'temperature'},
            'pa': {'read': read, 'write': 1},
            'ea': {'allowed_ip': '0.0.0.0/0', 'start_time': now - 3600, 'end_time': now + 86400},
        })

    async def seed(self, count: int) -> list[Policy]:
        policies = [self.policy(i) for i in range(count)]
        proposals = [new_proposal(self.admin, ContractName.policy, 'AddPolicy', [p]) for p in policies]
        try:
            results = await asyncio.gather(*(self.edge.submit(p) for p in proposals))
        except DbcAbacError as err:
            raise FixtureError(f'pre-seeding failed: {err.message}')
        if any(r.code != TxValidationCode.valid for r in results):
            raise FixtureError('pre-seeding produced invalidated transactions')
        return policies

    async def proposals(self, function: BenchFunction, count: int) -> list[ProposalFactory]:
        """
        The proposals function seeds the state a function needs and prepares one proposal per transaction.
        Each proposal is signed when it is sent, so its timestamp is current at submission.

        :param function: BenchFunction: Function under load
        :param count: int: Number of proposals (warmup included)
        :return: Proposal factories touching distinct keys where the function writes
        """
        if function == BenchFunction.add_policy:
            return [deferred(self.admin, ContractName.policy, 'AddPolicy', [self.policy(i)]) for i in range(count)]
        if function == BenchFunction.update_policy:
            seeded = await self.seed(count)
            return [deferred(self.admin, ContractName.policy, 'UpdatePolicy',
                             [abac.policy_key(p), abac.with_permission(p, Operation.write, 0)]) for p in seeded]
        if function == BenchFunction.delete_policy:
            seeded = await self.seed(count)
            return [deferred(self.admin, ContractName.policy, 'DeletePolicy', [abac.policy_key(p)]) for p in seeded]
        (target,) = await self.seed(1)
        if function == BenchFunction.query_policy:
            selector = PolicySelector.by_object(target.oa.domain_id, target.oa.device_id)
            return [deferred(self.user, ContractName.policy, 'QueryPolicy', [selector]) for _ in range(count)]
        body = access_body(ObjectRef(device_id=target.oa.device_id, domain_id=target.oa.domain_id),
                           Operation.read, '10.0.0.1')
        return [deferred(self.user, ContractName.access, 'CheckAccess', [body]) for _ in range(count)]


async def _timed(edge: EdgeNode, make: ProposalFactory, clock: Callable[[], float]) -> Sample:
    proposal = make()
    submitted_at = clock()
    try:
        result = await edge.submit(proposal)
        ok = result.code == TxValidationCode.valid
    except DbcAbacError as err:
        logger.warning('bench transaction failed: %s', err)
        ok = False
    return Sample(submitted_at, clock(), ok)


async def issue(edge: EdgeNode, proposals: Sequence[ProposalFactory], rate: float,
                clock: Callable[[], float] = time.monotonic) -> list[Sample]:
    """
    The issue function submits proposals open-loop at a fixed rate and collects their completions.

    :param edge: EdgeNode: Edge receiving the load
    :param proposals: Sequence[ProposalFactory]: Proposal factories, each called at its send time
    :param rate: float: Submissions per second
    :param clock: Callable[[], float]: Monotonic clock
    :return: One sample per proposal
    """
    start = clock()
    tasks = []
    for index, make in enumerate(proposals):
        delay = start + index / rate - clock()
        if delay > 0:
            await asyncio.sleep(delay)
        tasks.append(asyncio.create_task(_timed(edge, make, clock)))
    return list(await asyncio.gather(*tasks))


def summarize(bench: BenchScenario, samples: Sequence[Sample]) -> FunctionReport:
    done = [s for s in samples if s.ok]
    latencies = [s.completed_at - s.submitted_at for s in done]
    first_submit = min(s.submitted_at for s in samples)
    window = max(s.completed_at for s in done) - first_submit if done else 0.0
    return FunctionReport(
        function=bench.function,
        send_rate_tps=bench.send_rate_tps,
        submitted=len(samples),
        succeeded=len(done),
        failed=len(samples) - len(done),
        min_latency=min(latencies, default=0.0),
        avg_latency=statistics.fmean(latencies) if latencies else 0.0,
        max_latency=max(latencies, default=0.0),
        throughput=len(done) / window if window > 0 else 0.0,
        submission_span=max(s.submitted_at for s in samples) - first_submit,
    )


def write_report(report: BenchReport, out: Path) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(canonical.dumps_str(report), encoding='utf-8')


async def run_scenario(bench: BenchScenario, network: Network, out: Optional[Path] = None,
                       clock: Callable[[], float] = time.monotonic) -> BenchReport:
    """
    The run_scenario function seeds fixtures, sends the warmup, then measures total_tx transactions.
    Latency runs from submission until the commit is visible on the submitting edge.

    :param bench: BenchScenario: Function, rate and transaction counts
    :param network: Network: A started network
    :param out: Optional[Path]: Report file to write
    :param clock: Callable[[], float]: Monotonic clock
    :return: The report
    """
    fixture = Fixture.enroll(network)
    proposals = await fixture.proposals(bench.function, bench.warmup_tx + bench.total_tx)
    if bench.warmup_tx:
        await issue(fixture.edge, proposals[:bench.warmup_tx], bench.send_rate_tps, clock)
    samples = await issue(fixture.edge, proposals[bench.warmup_tx:], bench.send_rate_tps, clock)
    report = BenchReport(scenario=bench, result=summarize(bench, samples))
    logger.info('%s at %.0f TPS: %d/%d ok, avg latency %.3f s, throughput %.2f TPS', bench.function.value,
                bench.send_rate_tps, report.result.succeeded, report.result.submitted, report.result.avg_latency,
                report.result.throughput)
    if out is not None:
        write_report(report, out)
    return report


def render_table(reports: Sequence[BenchReport]) -> str:
    """
    The render_table function lays the reports out as function rows against metric/rate columns.

    :param reports: Sequence[BenchReport]: Reports of a suite
    :return: A plain-text table
    """
    rates = sorted({r.scenario.send_rate_tps for r in reports})
    columns = [f'{metric}@{rate:g}' for metric in TABLE_METRICS for rate in rates]
    cells = {(r.scenario.function, f'{metric}@{r.scenario.send_rate_tps:g}'): getattr(r.result, metric)
             for r in reports for metric in TABLE_METRICS}
    functions = [f for f in BenchFunction if any(r.scenario.function == f for r in reports)]
    lines = ['function'.ljust(16) + ''.join(c.rjust(18) for c in columns)]
    for function in functions:
        values = [cells.get((function, c)) for c in columns]
        lines.append(function.value.ljust(16) + ''.join(('-' if v is None else f'{v:.3f}').rjust(18) for v in values))
    return '\n'.join(lines) + '\n'


@contextlib.asynccontextmanager
async def fresh_network(topology: Topology, base_dir: Optional[Path] = None) -> AsyncIterator[Network]:
    """
    The fresh_network function provisions a throwaway network and runs it in-process.

    :param topology: Topology: Network layout
    :param base_dir: Optional[Path]: Parent directory of the artifacts, a temporary one when omitted
    :return: The started network
    """
    with tempfile.TemporaryDirectory(dir=base_dir) as tmp:
        config, _ = init_network(topology, Path(tmp) / 'network')
        network = Network(config)
        await network.start()
        try:
            yield network
        finally:
            await network.stop()


async def run_suite(topology: Topology, out_dir: Path, rates: Sequence[float] = SUITE_RATES,
                    total_tx: int = SUITE_TOTAL, functions: Sequence[BenchFunction] = SUITE_FUNCTIONS,
                    warmup_tx: Optional[int] = None) -> SuiteReport:
    """
    The run_suite function runs every function at every rate, each on a fresh network.
    Each network must pass a health check before load is applied.

    :param topology: Topology: Layout of each fresh network
    :param out_dir: Path: Receives one report per scenario plus the table
    :param rates: Sequence[float]: Send rates
    :param total_tx: int: Measured transactions per scenario
    :param functions: Sequence[BenchFunction]: Functions to measure
    :param warmup_tx: Optional[int]: Warmup per scenario
    :return: All reports and the rendered table
    """
    benches = [scenario(f, rate, total_tx, warmup_tx) for f in functions for rate in rates]
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for bench in benches:
        async with fresh_network(topology) as network:
            await network.health_check()
            out = out_dir / f'{bench.function.value}-{bench.send_rate_tps:g}.json'
            reports.append(await run_scenario(bench, network, out))
    table = render_table(reports)
    (out_dir / 'table.txt').write_text(table, encoding='utf-8')
    return SuiteReport(reports=tuple(reports), table=table)
