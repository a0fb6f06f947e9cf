import json
import logging
import shutil
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

import torch

CHECKPOINT_VERSION = '1.0'


class CheckpointManager:
    """
    Sauvegarde et restauration de la recherche d'architecture : scores α,
    λ, époque et historique en JSON, poids du réseau mixte dans un fichier
    torch voisin. L'ancien fichier est copié en backup avant chaque écriture.
    """

    def __init__(self, checkpoint_file='search_checkpoint.json',
                 backup_file='search_checkpoint_backup.json'):
        self.checkpoint_file = Path(checkpoint_file)
        self.backup_file = Path(backup_file)
        self.logger = logging.getLogger(__name__)
        self.total_saves = 0

    @classmethod
    def from_settings(cls, search_settings: Dict[str, Any], directory='.') -> 'CheckpointManager':
        directory = Path(directory)
        return cls(directory / search_settings['checkpoint_file'],
                   directory / search_settings['checkpoint_backup_file'])

    @staticmethod
    def _weights_path(path: Path) -> Path:
        return path.with_suffix('.pt')

    def save(self, state: Dict[str, Any], weights: Optional[Dict[str, torch.Tensor]] = None):
        """Écrit le point de reprise ; `state` doit être sérialisable en JSON."""
        self.total_saves += 1
        data = {
            'timestamp': datetime.now().isoformat(),
            'version': CHECKPOINT_VERSION,
            'state': state,
            'stats': {'total_saves': self.total_saves, 'last_save': datetime.now().isoformat()},
        }
        try:
            # Créer une sauvegarde de l'ancien fichier
            if self.checkpoint_file.exists():
                shutil.copy2(self.checkpoint_file, self.backup_file)
                old_weights = self._weights_path(self.checkpoint_file)
                if old_weights.exists():
                    shutil.copy2(old_weights, self._weights_path(self.backup_file))

            self.checkpoint_file.parent.mkdir(parents=True, exist_ok=True)
            if weights is not None:
                torch.save(weights, self._weights_path(self.checkpoint_file))
            with open(self.checkpoint_file, 'w', encoding='utf-8') as f:
                json.dump(data, f, indent=2, ensure_ascii=False)
            self.logger.debug(f"Point de reprise sauvegardé (époque {state.get('epoch')}, "
                              f"sauvegarde #{self.total_saves})")
        except OSError:
            self.logger.error(f"Erreur lors de la sauvegarde du point de reprise: {self.checkpoint_file}")
            raise

    def restore(self, expected: Optional[Dict[str, Any]] = None):
        """
        Retourne (state, weights) depuis le fichier principal ou le backup, ou
        None si rien n'est exploitable. Les clés de `expected` doivent
        correspondre à celles de l'état sauvegardé.
        """
        load_path = None
        if self.checkpoint_file.exists():
            load_path = self.checkpoint_file
        elif self.backup_file.exists():
            load_path = self.backup_file
            self.logger.warning("Point de reprise principal introuvable, utilisation du backup")
        if load_path is None:
            self.logger.info("Aucun point de reprise trouvé, démarrage à neuf")
            return None

        try:
            with open(load_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            self.logger.warning(f"Point de reprise illisible ({load_path}): {e}, démarrage à neuf")
            return None

        version = data.get('version')
        if version != CHECKPOINT_VERSION:
            self.logger.warning(f"Version de point de reprise incompatible: {version}, démarrage à neuf")
            return None
        state = data.get('state', {})
        for key, value in (expected or {}).items():
            if state.get(key) != value:
                self.logger.warning(f"Point de reprise pour {key}={state.get(key)!r}, "
                                    f"{value!r} attendu, démarrage à neuf")
                return None

        weights = None
        weights_path = self._weights_path(load_path)
        if weights_path.exists():
            weights = torch.load(weights_path, map_location='cpu')
        self.total_saves = data.get('stats', {}).get('total_saves', 0)
        self.logger.info(f"Point de reprise restauré: époque {state.get('epoch')}, "
                         f"sauvegarde #{self.total_saves}")
        return state, weights

    def get_checkpoint_info(self) -> Dict[str, Any]:
        """Retourne des informations sur le point de reprise."""
        if not self.checkpoint_file.exists():
            return {'file_exists': False, 'message': 'Aucun point de reprise trouvé'}
        try:
            with open(self.checkpoint_file, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            return {'file_exists': False, 'error': str(e)}
        return {
            'file_exists': True,
            'timestamp': data.get('timestamp'),
            'version': data.get('version'),
            'epoch': data.get('state', {}).get('epoch'),
            'total_saves': data.get('stats', {}).get('total_saves', 0),
            'file_size_kb': self.checkpoint_file.stat().st_size / 1024,
        }

    def clear(self):
        for path in (self.checkpoint_file, self.backup_file):
            for candidate in (path, self._weights_path(path)):
                if candidate.exists():
                    candidate.unlink()
