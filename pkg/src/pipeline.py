"""
Sweep pipeline that runs independent experiments in worker processes
"""

import itertools
import logging
import queue
import time
from multiprocessing import Process, Queue
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from benchmarks import default_output_name, history_rates, run_experiment
from config import ExperimentConfig, config_from_mapping

logger = logging.getLogger(__name__)


def execute(config: ExperimentConfig, output: Path, index: int = 0) -> Dict[str, Any]:
    """
    Run one experiment and describe the outcome as a result message.

    Exceptions are reported as {'type': 'error'} messages instead of raised.
    """
    start_time = time.time()
    try:
        history, path = run_experiment(config, output)
        return {
            'type': 'result',
            'index': index,
            'output': str(path),
            'levels': len(history.records),
            'stop_reason': history.stop_reason,
            'rates': history_rates(history.records),
            'timing': time.time() - start_time,
        }
    except Exception as e:
        logger.exception("experiment %d failed", index)
        return {
            'type': 'error',
            'index': index,
            'output': str(output),
            'error': f"{type(e).__name__}: {e}",
        }


class SweepWorker(Process):
    """
    Worker process for experiments of a sweep.
    Receives configurations on the command queue and posts one message per
    experiment on the result queue.
    """

    def __init__(self, command_queue: Queue, result_queue: Queue):
        """
        Initialize the worker.

        Args:
            command_queue: Queue delivering {'type': 'run_experiment'} and
                {'type': 'shutdown'} commands
            result_queue: Queue receiving result and error messages
        """
        super().__init__(daemon=True)
        self.command_queue = command_queue
        self.result_queue = result_queue
        self.running = True

    def run(self):
        """Main loop, runs in the worker process."""
        self.result_queue.put({'type': 'init_complete', 'worker': self.name})
        while self.running:
            try:
                command = self.command_queue.get(timeout=0.5)
            except queue.Empty:
                continue
            if command['type'] == 'run_experiment':
                try:
                    config = config_from_mapping(command['config'])
                except Exception as e:
                    self.result_queue.put({'type': 'error', 'index': command.get('index', -1),
                                           'output': command.get('output'), 'error': str(e)})
                    continue
                self.result_queue.put(execute(config, Path(command['output']), command.get('index', 0)))
            elif command['type'] == 'shutdown':
                self.running = False


def sweep_configs(base: ExperimentConfig, ells: Optional[Sequence[float]] = None,
                  degrees: Optional[Sequence[int]] = None,
                  weights: Optional[Sequence[str]] = None) -> List[ExperimentConfig]:
    """Cartesian product of ell, k and weight lists on top of a base configuration."""
    ells = ells or [base.ell]
    degrees = degrees or [base.k]
    weights = weights or [base.weight]
    return [base.with_updates(ell=float(ell), k=int(k), weight=str(w), output=None)
            for ell, k, w in itertools.product(ells, degrees, weights)]


def run_sweep(configs: Iterable[ExperimentConfig], output_dir: Path, workers: int = 1) -> List[Dict[str, Any]]:
    """
    Run all experiments of a sweep, each writing its own CSV.

    Args:
        configs: experiment configurations
        output_dir: directory of the CSV files
        workers: number of worker processes, 1 runs everything in this process

    Returns:
        Result or error messages in configuration order
    """
    configs = list(configs)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    outputs = [output_dir / default_output_name(c) for c in configs]
    if len(set(outputs)) != len(outputs):
        raise ValueError("sweep produces clashing output file names")

    print("=" * 60)
    print(f"SWEEP: {len(configs)} experiments, {workers} worker(s)")
    print("=" * 60)

    if workers <= 1 or len(configs) <= 1:
        messages = [execute(c, out, i) for i, (c, out) in enumerate(zip(configs, outputs))]
    else:
        messages = _run_parallel(configs, outputs, min(workers, len(configs)))

    for message in messages:
        if message['type'] == 'result':
            print(f"✓ {message['output']} ({message['levels']} levels)")
        else:
            print(f"✗ {message['output']}: {message['error']}")
    return messages


def _run_parallel(configs, outputs, workers) -> List[Dict[str, Any]]:
    command_queue: Queue = Queue()
    result_queue: Queue = Queue()
    pool = [SweepWorker(command_queue, result_queue) for _ in range(workers)]
    for worker in pool:
        worker.start()

    for index, (config, output) in enumerate(zip(configs, outputs)):
        # sweep workers assemble serially
        payload = config.with_updates(workers=1).to_dict()
        command_queue.put({'type': 'run_experiment', 'index': index, 'config': payload, 'output': str(output)})
    for _ in pool:
        command_queue.put({'type': 'shutdown'})

    messages: Dict[int, Dict[str, Any]] = {}
    while len(messages) < len(configs):
        try:
            message = result_queue.get(timeout=1.0)
        except queue.Empty:
            if not any(worker.is_alive() for worker in pool):
                break
            continue
        if message['type'] == 'init_complete':
            logger.debug("%s ready", message['worker'])
            continue
        messages[message['index']] = message

    for worker in pool:
        worker.join(timeout=5.0)
    for index, output in enumerate(outputs):
        messages.setdefault(index, {'type': 'error', 'index': index, 'output': str(output),
                                    'error': 'worker exited without a result'})
    return [messages[i] for i in range(len(configs))]
