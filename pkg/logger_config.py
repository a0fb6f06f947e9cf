import logging
import logging.handlers
import os
from datetime import datetime
from typing import Optional


def level_from_name(name) -> Optional[int]:
    """Niveau numérique d'un nom ('debug', 'INFO'...), None s'il est inconnu."""
    level = logging.getLevelName(str(name).upper())
    return level if isinstance(level, int) else None


def setup_logging(log_level=logging.INFO, log_dir='logs', console=True):
    """Configure le système de logging avec rotation des fichiers."""

    # Créer le dossier logs s'il n'existe pas
    if not os.path.exists(log_dir):
        os.makedirs(log_dir)

    log_format = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    # Logger principal
    logger = logging.getLogger()
    logger.setLevel(log_level)

    # Éviter les handlers en double si setup_logging est rappelé (tests, bench)
    for handler in list(logger.handlers):
        if getattr(handler, '_terngc', False):
            logger.removeHandler(handler)
            handler.close()

    # Handler pour fichier avec rotation (max 10MB, 5 fichiers)
    file_handler = logging.handlers.RotatingFileHandler(
        filename=os.path.join(log_dir, 'terngc.log'),
        maxBytes=10 * 1024 * 1024,  # 10MB
        backupCount=5,
        encoding='utf-8'
    )
    file_handler.setLevel(log_level)
    file_handler.setFormatter(log_format)

    # Handler séparé pour les erreurs
    error_handler = logging.handlers.RotatingFileHandler(
        filename=os.path.join(log_dir, 'errors.log'),
        maxBytes=5 * 1024 * 1024,  # 5MB
        backupCount=3,
        encoding='utf-8'
    )
    error_handler.setLevel(logging.ERROR)
    error_handler.setFormatter(log_format)

    handlers = [file_handler, error_handler]

    # Handler pour la console (stderr, stdout reste réservé aux métriques)
    if console:
        console_handler = logging.StreamHandler()
        console_handler.setLevel(log_level)
        console_handler.setFormatter(log_format)
        handlers.append(console_handler)

    for handler in handlers:
        handler._terngc = True
        logger.addHandler(handler)

    # Logger spécifique pour les statistiques de session 2PC
    _setup_side_logger('session_stats', os.path.join(log_dir, 'session_stats.log'),
                       50 * 1024 * 1024)

    # Journal d'entraînement : une ligne JSON par époque
    _setup_side_logger('training_log', os.path.join(log_dir, 'training.jsonl'),
                       20 * 1024 * 1024, fmt='%(message)s')

    return logger


def _setup_side_logger(name, filename, max_bytes, fmt='%(asctime)s - %(message)s'):
    """Attache un fichier rotatif dédié à un logger secondaire."""
    side_logger = logging.getLogger(name)
    for handler in list(side_logger.handlers):
        side_logger.removeHandler(handler)
        handler.close()
    side_handler = logging.handlers.RotatingFileHandler(
        filename=filename,
        maxBytes=max_bytes,
        backupCount=2,
        encoding='utf-8'
    )
    side_handler.setFormatter(logging.Formatter(fmt))
    side_logger.addHandler(side_handler)
    side_logger.setLevel(logging.INFO)
    return side_logger


def log_startup_info(command):
    """Log les informations de démarrage."""
    logger = logging.getLogger(__name__)
    logger.info("=" * 60)
    logger.info(f"terngc {command} - Démarrage")
    logger.info(f"Heure de démarrage: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    logger.info("=" * 60)


def log_shutdown_info(command):
    """Log les informations d'arrêt."""
    logger = logging.getLogger(__name__)
    logger.info("=" * 60)
    logger.info(f"terngc {command} - Arrêt")
    logger.info(f"Heure d'arrêt: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    logger.info("=" * 60)
