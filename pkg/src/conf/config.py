import logging
from pathlib import Path

from pydantic import BaseSettings, validator


class Settings(BaseSettings):
    network_config: Path = Path('network/network.json')
    network_dir: Path = Path('network')
    max_block_txs: int = 10
    block_timeout_ms: int = 250
    request_timeout_s: float = 10.0
    max_clock_skew_s: int = 5
    max_frame_bytes: int = 16 * 1024 * 1024
    bcrypt_rounds: int = 12
    bench_warmup_tx: int = 10
    log_level: str = 'INFO'
    log_format: str = '%(asctime)s %(levelname)s %(name)s: %(message)s'

    @validator('max_block_txs', 'block_timeout_ms', 'max_frame_bytes', 'max_clock_skew_s')
    def positive(cls, v):
        if v <= 0:
            raise ValueError('must be positive')
        return v

    @validator('bcrypt_rounds')
    def bcrypt_range(cls, v):
        if not 4 <= v <= 31:
            raise ValueError('bcrypt rounds must be within 4..31')
        return v

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"


settings = Settings()


def configure_logging(level: str | None = None) -> None:
    """
    The configure_logging function installs a single stream handler on the root logger.
    Calling it again only changes the level.

    :param level: str | None: Log level name, defaults to settings.log_level
    :return: None
    """
    root = logging.getLogger()
    root.setLevel((level or settings.log_level).upper())
    if not any(getattr(h, '_dbc_abac', False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(settings.log_format))
        handler._dbc_abac = True
        root.addHandler(handler)
