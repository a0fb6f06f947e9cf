#!/usr/bin/env python3
"""
terngc - Inférence privée de réseaux ternaires par circuits garbled
Entraîne, compile, mesure et sert des modèles à poids {-1, 0, +1}.

Codes de sortie : 0 succès, 1 erreur d'usage ou de configuration,
2 erreur d'exécution ou de protocole.
"""

import argparse
import json
import logging
import signal
import sys
import threading
import time
import traceback
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from arch_search import SearchConfig, lambda_sweep, search
from checkpoint_manager import CheckpointManager
from circuit_cache import CircuitCache
from cost_model import REFERENCE_KERNELS, REFERENCE_SHAPE, CostTable, measure_op_costs
from datasets import load_dataset, load_image
from logger_config import level_from_name, log_shutdown_info, log_startup_info, setup_logging
from model_core import count_params, random_params
from model_zoo import REFERENCE_SCALES, dataset_for, get_architecture, list_architectures, register_architecture
from netlist import count_gates, emit_netlist, estimate_communication
from netlist_compiler import compile_model
from param_file import read_architecture, read_params, write_architecture, write_params
from runtime_config import ConfigError, RuntimeConfig, load_config
from trainer import TrainConfig, evaluate, scaling_sweep, sparsity, train
from twopc_protocol import InferenceServer, SessionAbort, SessionConfig, SessionMetrics, run_client

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    """Combinaison d'options invalide."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _shape(text: str):
    try:
        parts = tuple(int(part) for part in text.lower().split('x'))
    except ValueError:
        raise argparse.ArgumentTypeError(f"forme HxWxC attendue: {text}")
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"forme HxWxC attendue: {text}")
    return parts


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument('--base-config', default='config.json', help="fichier JSON des valeurs par défaut")
    common.add_argument('--config', help="surcharges section.cle=valeur")
    common.add_argument('--log-level', help="niveau de log (défaut: logging.level)")
    common.add_argument('--log-dir', help="dossier des journaux (défaut: paths.log_dir)")
    common.add_argument('--report', help="écrit aussi le résultat en JSON dans ce fichier")

    model = _Parser(add_help=False)
    model.add_argument('--arch', help="architecture du zoo")
    model.add_argument('--arch-file', help="architecture JSON (par exemple issue de search)")
    model.add_argument('--scale', type=float, help="facteur d'échelle")

    parser = _Parser(prog='terngc', description="Inférence privée de réseaux ternaires par circuits garbled")
    commands = parser.add_subparsers(dest='command', metavar='commande')

    p = commands.add_parser('train', parents=[common, model], help="entraîne un modèle ternaire")
    p.add_argument('--epochs', type=int)
    p.add_argument('--seed', type=int)
    p.add_argument('--weight-mode', choices=('ternary', 'binary'))
    p.add_argument('--output', help="fichier de paramètres produit")
    p.add_argument('--log-file', help="journal d'entraînement JSON supplémentaire")
    p.add_argument('--scales', type=float, nargs='+', help="balayage des facteurs d'échelle")
    p.add_argument('--seeds', type=int, nargs='+', default=[0], help="graines du balayage")

    p = commands.add_parser('compile', parents=[common, model], help="écrit la netlist d'un modèle")
    p.add_argument('--params', required=True)
    p.add_argument('--output', required=True, help="netlist au format texte")

    p = commands.add_parser('gates', parents=[common, model], help="compte les portes et les octets prévus")
    p.add_argument('--params', help="paramètres (sinon poids aléatoires de graine --seed)")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--per-layer', action='store_true')
    p.add_argument('--ot-mode', choices=('group', 'simulated'))

    p = commands.add_parser('costs', parents=[common], help="mesure les coûts des opérations candidates")
    p.add_argument('--shape', type=_shape, default=REFERENCE_SHAPE, help="forme HxWxC de référence")
    p.add_argument('--kernels', type=int, default=REFERENCE_KERNELS)
    p.add_argument('--repeats', type=int, default=1)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--output', help="table de coûts JSON produite")

    p = commands.add_parser('search', parents=[common], help="recherche d'architecture régularisée")
    p.add_argument('--dataset', choices=('mnist', 'cifar10'))
    p.add_argument('--cells', type=int)
    p.add_argument('--lambda', dest='lambdas', type=float, nargs='+')
    p.add_argument('--budget-epochs', type=int)
    p.add_argument('--seed', type=int)
    p.add_argument('--scale', type=float)
    p.add_argument('--retrain-epochs', type=int)
    p.add_argument('--costs', help="table de coûts JSON (sinon mesurée)")
    p.add_argument('--output-dir', help="dossier des architectures produites")
    p.add_argument('--resume', action='store_true', help="reprend depuis le point de reprise")

    p = commands.add_parser('serve', parents=[common, model], help="sert un modèle en inférence privée")
    p.add_argument('--model', required=True, help="fichier de paramètres")
    p.add_argument('--listen')
    p.add_argument('--sessions', type=int, help="s'arrête après N sessions")
    p.add_argument('--max-sessions', type=int)
    p.add_argument('--insecure-ot', action='store_true')

    p = commands.add_parser('infer', parents=[common, model], help="inférence privée d'une image")
    p.add_argument('--image', required=True, help="image IDX ou .npy")
    p.add_argument('--index', type=int, default=0, help="indice dans un lot d'images")
    p.add_argument('--connect')
    p.add_argument('--ot-mode', choices=('group', 'simulated'))
    p.add_argument('--insecure-ot', action='store_true')
    p.add_argument('--netlist-hash', help="empreinte de netlist attendue")

    p = commands.add_parser('bench', parents=[common, model], help="session locale mesurée")
    p.add_argument('--params', help="paramètres (sinon poids aléatoires de graine --seed)")
    p.add_argument('--scales', type=float, nargs='+')
    p.add_argument('--images', type=int, default=1, help="sessions par facteur d'échelle")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--ot-mode', choices=('group', 'simulated'))
    p.add_argument('--insecure-ot', action='store_true')

    commands.add_parser('zoo', parents=[common], help="liste les architectures connues")
    return parser


class TernGcApp:
    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.runtime: Optional[RuntimeConfig] = None
        self.server: Optional[InferenceServer] = None
        self.logger = logging.getLogger(__name__)
        self.report = None

    def load_config(self):
        """Charge config.json, les surcharges et valide le tout."""
        config = load_config(self.args.base_config, self.args.config)
        self.runtime = RuntimeConfig(config)
        errors = self.runtime.validate_config()
        if errors:
            raise ConfigError('; '.join(errors))

    def initialize(self):
        paths = self.runtime.get_paths()
        name = self.args.log_level or self.runtime.values['logging']['level']
        level = level_from_name(name)
        if level is None:
            raise UsageError(f"niveau de log inconnu: {name}")
        setup_logging(level, self.args.log_dir or paths['log_dir'])
        log_startup_info(self.args.command)
        self.logger.info("Configuration validée ✅")

    def _signal_handler(self, signum, frame):
        """Arrêt propre du serveur."""
        self.logger.info(f"Signal {signum} reçu, arrêt en cours...")
        if self.server is not None:
            self.server.stop()

    def run(self) -> int:
        handler = getattr(self, f"cmd_{self.args.command}")
        handler()
        if self.args.report and self.report is not None:
            with open(self.args.report, 'w', encoding='utf-8') as f:
                json.dump(self.report, f, indent=2, ensure_ascii=False)
            self.logger.info(f"Rapport écrit: {self.args.report}")
        return EXIT_OK

    def shutdown(self):
        if self.server is not None:
            self.server.stop()
        log_shutdown_info(self.args.command)

    # Résolution des entrées

    def _architecture(self, scale: Optional[float] = None):
        scale = self.args.scale if scale is None else scale
        if self.args.arch_file:
            arch = read_architecture(self.args.arch_file)
            register_architecture(arch)
            return get_architecture(arch.name, scale) if scale is not None else arch
        if not self.args.arch:
            raise UsageError("--arch ou --arch-file requis")
        return get_architecture(self.args.arch, scale)

    def _read_params(self, path, scale: Optional[float] = None):
        """Sans facteur d'échelle explicite, celui du fichier fait foi."""
        arch = None
        if self.args.arch_file or (self.args.arch and scale is not None):
            arch = self._architecture(scale)
        return read_params(path, arch)

    def _model(self, scale: Optional[float] = None):
        """Paramètres lus depuis --params, ou tirés au hasard pour la mesure des coûts."""
        scale = self.args.scale if scale is None else scale
        path = getattr(self.args, 'params', None)
        if path:
            return self._read_params(path, scale)
        arch = self._architecture(scale)
        self.logger.info(f"Pas de paramètres fournis, poids aléatoires (graine {self.args.seed})")
        return random_params(arch, np.random.default_rng(self.args.seed))

    def _ot_mode(self) -> str:
        return self.args.ot_mode or self.runtime.get_ot_settings()['mode']

    # Commandes

    def cmd_zoo(self):
        rows = []
        print("architecture\tscale\tparams\tcouches")
        for name in list_architectures():
            scale = REFERENCE_SCALES.get(name, 1.0)
            arch = get_architecture(name, scale)
            rows.append({'architecture': name, 'scale': scale, 'params': count_params(arch)})
            print(f"{name}\t{scale:g}\t{count_params(arch)}\t{arch.describe()}")
        self.report = rows

    def cmd_train(self):
        settings = {'epochs': self.args.epochs, 'seed': self.args.seed, 'weight_mode': self.args.weight_mode}
        arch = self._architecture()
        paths = self.runtime.get_paths()
        dataset_name = dataset_for(arch)
        config = TrainConfig.from_runtime(self.runtime, dataset=dataset_name,
                                          scaling_factor=arch.scaling_factor, **settings)
        train_set = load_dataset(dataset_name, paths, 'train')
        test_set = load_dataset(dataset_name, paths, 'test')

        if self.args.scales:
            rows = scaling_sweep(arch, config, train_set, test_set, self.args.scales, self.args.seeds)
            print("scale\tparams\taccuracy\tsparsity")
            for row in rows:
                print(f"{row['scale']:g}\t{row['params']}\t{row['accuracy']:.4f}\t{row['sparsity']:.3f}")
            self.report = rows
            return

        params, history = train(arch, config, train_set, log_path=self.args.log_file)
        accuracy = evaluate(arch, params, test_set)
        output = Path(self.args.output or Path(paths['output_dir']) / f"{arch.name}-{arch.scaling_factor:g}.tgcp")
        output.parent.mkdir(parents=True, exist_ok=True)
        write_params(params, output)
        print("architecture\tscale\tparams\taccuracy\tsparsity")
        print(f"{arch.name}\t{arch.scaling_factor:g}\t{count_params(arch)}\t{accuracy:.4f}\t{sparsity(params):.3f}")
        self.report = {'architecture': arch.name, 'scale': arch.scaling_factor, 'accuracy': accuracy,
                       'sparsity': sparsity(params), 'params_file': str(output), 'history': history}

    def cmd_compile(self):
        params = self._model()
        netlist = compile_model(params.arch, params)
        emit_netlist(netlist, self.args.output)
        stats = count_gates(netlist)
        print("non_xor\tfree\tnetlist_hash")
        print(f"{stats.non_xor}\t{stats.free}\t{netlist.hexdigest()}")
        self.report = {'non_xor': stats.non_xor, 'free': stats.free, 'netlist_hash': netlist.hexdigest()}

    def cmd_gates(self):
        params = self._model()
        netlist = compile_model(params.arch, params)
        stats = count_gates(netlist)
        estimate = estimate_communication(netlist, ot_mode=self._ot_mode())
        if self.args.per_layer:
            print("layer\tnon_xor\tfree")
            for name, layer_stats in netlist.layer_stats:
                print(f"{name}\t{layer_stats.non_xor}\t{layer_stats.free}")
        print("non_xor\tfree\tpredicted_bytes")
        print(f"{stats.non_xor}\t{stats.free}\t{estimate.total}")
        self.report = {
            'architecture': params.arch.name, 'scale': params.arch.scaling_factor,
            'non_xor': stats.non_xor, 'free': stats.free, 'communication': estimate.as_dict(),
            'layers': [{'layer': name, 'non_xor': s.non_xor, 'free': s.free} for name, s in netlist.layer_stats],
        }

    def cmd_costs(self):
        table = measure_op_costs(shape=tuple(self.args.shape), kernels=self.args.kernels,
                                 seed=self.args.seed, repeats=self.args.repeats)
        print(table.format_report())
        if self.args.output:
            table.save(self.args.output)
        self.report = table.to_dict()

    def _search_costs(self) -> CostTable:
        """Table de coûts de la recherche : --costs, puis search.cost_table, sinon mesure réduite."""
        settings = self.runtime.get_search_settings()
        path = self.args.costs or settings['cost_table']
        if path:
            table = CostTable.load(path)
            self.logger.info(f"Table de coûts chargée depuis {path} (forme {table.shape})")
            return table
        shape = tuple(settings['measure_shape'])
        self.logger.info(f"Aucune table de coûts fournie : mesure à {shape}, "
                         f"{settings['measure_kernels']} noyaux")
        return measure_op_costs(shape=shape, kernels=settings['measure_kernels'], seed=self.args.seed or 0)

    def cmd_search(self):
        args = self.args
        config = SearchConfig.from_runtime(self.runtime, dataset=args.dataset, cells=args.cells,
                                           budget_epochs=args.budget_epochs, seed=args.seed,
                                           scaling_factor=args.scale, retrain_epochs=args.retrain_epochs)
        lambdas = args.lambdas or [config.lam]
        for lam in lambdas:
            if not 0.0 <= lam <= 1.0:
                raise UsageError(f"--lambda doit être dans [0, 1]: {lam}")
        paths = self.runtime.get_paths()
        output_dir = Path(args.output_dir or paths['output_dir'])
        output_dir.mkdir(parents=True, exist_ok=True)

        table = self._search_costs()
        dataset = load_dataset(config.dataset, paths, 'train')
        test = load_dataset(config.dataset, paths, 'test')

        if len(lambdas) == 1:
            checkpoint = None
            if args.resume:
                checkpoint = CheckpointManager.from_settings(self.runtime.get_search_settings(), output_dir)
            results = [search(dataset, config.cells, lambdas[0], table, config.budget_epochs,
                              replace(config, lam=lambdas[0]), test=test, checkpoint=checkpoint)]
        else:
            results = lambda_sweep(dataset, config.cells, lambdas, table, config.budget_epochs, config, test=test)

        print("lambda\tpenalty\tparams\taccuracy\tsparsity\tarchitecture")
        for result in results:
            print(result.format_report(), file=sys.stderr)
            arch_path = output_dir / f"{result.architecture.name}.arch.json"
            write_architecture(result.architecture, arch_path)
            if result.model is not None:
                write_params(result.model, arch_path.with_name(f"{result.architecture.name}.tgcp"))
            accuracy = '-' if result.accuracy is None else f"{result.accuracy:.4f}"
            density = '-' if result.sparsity is None else f"{result.sparsity:.3f}"
            print(f"{result.lam:g}\t{result.total_penalty:.2f}\t{result.params}\t{accuracy}\t{density}\t"
                  f"{arch_path}")
            if result.budget_exhausted:
                self.logger.warning(f"λ={result.lam:g}: budget épuisé, résultat partiel")
        self.report = [result.to_dict() for result in results]

    def cmd_serve(self):
        signal.signal(signal.SIGINT, self._signal_handler)
        signal.signal(signal.SIGTERM, self._signal_handler)
        params = self._read_params(self.args.model, self.args.scale)
        config = SessionConfig.from_runtime(self.runtime, 'server', address=self.args.listen,
                                            max_sessions=self.args.max_sessions,
                                            insecure_ot=True if self.args.insecure_ot else None)
        self.server = InferenceServer(config, params)
        self.server.bind()
        logs = self.server.serve(self.args.sessions)
        failures = [log for log in logs if log['status'] != 'ok']
        self.logger.info(f"Serveur arrêté: {len(logs)} session(s), {len(failures)} en échec")
        self.report = logs

    def cmd_infer(self):
        arch = self._architecture()
        image = load_image(self.args.image, arch.input_shape, self.args.index)
        config = SessionConfig.from_runtime(self.runtime, 'client', address=self.args.connect,
                                            architecture=arch.name, scaling_factor=arch.scaling_factor,
                                            ot_mode=self.args.ot_mode, netlist_hash=self.args.netlist_hash,
                                            insecure_ot=True if self.args.insecure_ot else None)
        cache = CircuitCache(self.runtime.section('circuit_cache')['cache_size'])
        result = run_client(config, image, cache)
        self.logger.info(f"Cache de circuits: {cache.get_stats()}")
        print(f"class\t{result.predicted_class}")
        print("scores\t" + ' '.join(str(int(s)) for s in result.scores))
        print("offline\tonline\ttotal\tcomm_mb")
        print(result.metrics.as_row())
        self.report = {'predicted_class': result.predicted_class,
                       'scores': [int(s) for s in result.scores],
                       'garbled_digest': result.garbled_digest, 'metrics': result.metrics.as_dict()}

    def cmd_bench(self):
        scales = self.args.scales or [self.args.scale]
        rows = []
        print("architecture\tscale\toffline\tonline\ttotal\tcomm_mb")
        for scale in scales:
            params = self._model(scale)
            metrics = self._loopback(params, max(1, self.args.images))
            arch = params.arch
            print(f"{arch.name}\t{arch.scaling_factor:g}\t{metrics.as_row()}")
            rows.append({'architecture': arch.name, 'scale': arch.scaling_factor, **metrics.as_dict()})
        self.report = rows

    def _loopback(self, params, sessions: int) -> SessionMetrics:
        """Serveur local dans un thread ; retourne les métriques client moyennées."""
        insecure = True if self.args.insecure_ot else None
        server_config = SessionConfig.from_runtime(self.runtime, 'server', address=('127.0.0.1', 0),
                                                   max_sessions=1, insecure_ot=insecure)
        self.server = InferenceServer(server_config, params)
        address = self.server.bind()
        thread = threading.Thread(target=self.server.serve, kwargs={'session_limit': sessions}, daemon=True)
        thread.start()

        arch = params.arch
        client_config = SessionConfig.from_runtime(self.runtime, 'client', address=address,
                                                   architecture=arch.name, scaling_factor=arch.scaling_factor,
                                                   ot_mode=self.args.ot_mode, insecure_ot=insecure)
        rng = np.random.default_rng(self.args.seed)
        cache = CircuitCache(self.runtime.section('circuit_cache')['cache_size'])
        total = SessionMetrics()
        try:
            for _ in range(sessions):
                image = rng.integers(0, 256, size=arch.input_shape, dtype=np.uint8)
                result = run_client(client_config, image, cache)
                metrics = result.metrics
                total.offline_seconds += metrics.offline_seconds / sessions
                total.online_seconds += metrics.online_seconds / sessions
                total.bytes_sent += metrics.bytes_sent
                total.bytes_received += metrics.bytes_received
                total.frames += metrics.frames
                total.ot_instances = metrics.ot_instances
                total.communication = metrics.communication
        finally:
            thread.join(timeout=server_config.io_timeout)
            self.server.stop()
            self.server = None
        total.bytes_sent //= sessions
        total.bytes_received //= sessions
        total.frames //= sessions
        return total


def main(argv: Optional[List[str]] = None) -> int:
    """Point d'entrée principal ; retourne le code de sortie."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"terngc: erreur: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return EXIT_OK if not e.code else EXIT_USAGE
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    app = TernGcApp(args)
    try:
        app.load_config()
        app.initialize()
    except (ConfigError, UsageError) as e:
        print(f"Erreur de configuration: {e}", file=sys.stderr)
        return EXIT_USAGE

    started = time.time()
    try:
        return app.run()
    except UsageError as e:
        app.logger.error(f"Usage: {e}")
        print(f"terngc: erreur: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SessionAbort as e:
        app.logger.error(f"Session interrompue: ABORT {e.reason.name}: {e}")
        print(f"ABORT {e.reason.name}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        app.logger.info("Interruption clavier détectée")
        return EXIT_RUNTIME
    except Exception as e:
        app.logger.error(f"Erreur lors de '{args.command}': {e}")
        app.logger.debug(f"Stack trace: {traceback.format_exc()}")
        print(f"terngc: erreur: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        app.logger.info(f"Commande '{args.command}' terminée en {time.time() - started:.1f}s")
        app.shutdown()


if __name__ == "__main__":
    sys.exit(main())
