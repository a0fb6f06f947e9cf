import hashlib
import json
import logging
import threading
import time
from collections import OrderedDict
from typing import Optional

from netlist import Netlist
from netlist_compiler import CircuitStructure, compile_model


class CircuitCache:
    """
    Cache des netlists compilées, indexé par l'empreinte de la structure
    publique (architecture, motif des zéros, seuils). Évite de recompiler
    le même modèle à chaque session.
    """

    def __init__(self, max_cache_size=8):
        self.cache = OrderedDict()
        self.max_cache_size = max(1, int(max_cache_size))
        self.logger = logging.getLogger(__name__)
        self._lock = threading.Lock()

        # Statistiques
        self.cache_hits = 0
        self.cache_misses = 0
        self.compile_seconds_saved = 0.0

    def _hash_structure(self, structure: CircuitStructure) -> str:
        """Créé la clé de cache à partir de la structure publique."""
        encoded = json.dumps(structure.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(encoded.encode('utf-8')).hexdigest()

    def get(self, structure: CircuitStructure) -> Optional[Netlist]:
        key = self._hash_structure(structure)
        with self._lock:
            entry = self.cache.get(key)
            if entry is None:
                self.cache_misses += 1
                return None
            self.cache.move_to_end(key)
            self.cache_hits += 1
            self.compile_seconds_saved += entry['compile_seconds']
        self.logger.debug(f"Cache HIT pour {structure.arch.describe()}")
        return entry['netlist']

    def put(self, structure: CircuitStructure, netlist: Netlist, compile_seconds: float = 0.0):
        key = self._hash_structure(structure)
        with self._lock:
            self.cache[key] = {
                'netlist': netlist,
                'compile_seconds': compile_seconds,
                'timestamp': time.time(),
            }
            self.cache.move_to_end(key)
            while len(self.cache) > self.max_cache_size:
                evicted, _ = self.cache.popitem(last=False)
                self.logger.info(f"Cache plein, netlist {evicted[:12]} retirée")

    def get_or_compile(self, structure: CircuitStructure) -> Netlist:
        """Retourne la netlist en cache ou la compile et la stocke."""
        netlist = self.get(structure)
        if netlist is not None:
            return netlist
        started = time.time()
        netlist = compile_model(structure.arch, structure)
        self.put(structure, netlist, time.time() - started)
        self.logger.debug(f"Cache MISS - Compilation de {structure.arch.describe()}")
        return netlist

    def get_stats(self) -> dict:
        """Retourne les statistiques du cache."""
        total_requests = self.cache_hits + self.cache_misses
        hit_rate = (self.cache_hits / total_requests * 100) if total_requests > 0 else 0

        return {
            'cache_hits': self.cache_hits,
            'cache_misses': self.cache_misses,
            'hit_rate_percent': round(hit_rate, 2),
            'compile_seconds_saved': round(self.compile_seconds_saved, 3),
            'cache_size': len(self.cache)
        }

    def clear(self):
        """Vide complètement le cache."""
        with self._lock:
            self.cache.clear()
            self.cache_hits = 0
            self.cache_misses = 0
            self.compile_seconds_saved = 0.0
        self.logger.info("Cache vidé complètement")
