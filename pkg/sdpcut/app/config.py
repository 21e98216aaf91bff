from pathlib import Path
from typing import List

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    app_name: str = Field(default="sdpcut")
    app_version: str = Field(default="1.0.0")
    log_level: str = Field(default="INFO")
    log_dir: Path = Field(default=Path("./logs"))

    threads: int = Field(default=4)
    output_dir: Path = Field(default=Path("./results"))

    sdp_rank: int = Field(default=0)  # 0 picks ceil(sqrt(2n)) + 1
    sdp_tol: float = Field(default=1e-7)
    sdp_max_iters: int = Field(default=2000)
    sdp_restarts: int = Field(default=3)
    sdp_seed: int = Field(default=0)

    eigen_tol: float = Field(default=1e-10)
    eigen_max_iters_factor: int = Field(default=10)

    enumeration_cap: int = Field(default=22)
    dense_z_limit: int = Field(default=4096)

    alpha: float = Field(default=0.04)
    eps_ratio: float = Field(default=0.1)
    w1: float = Field(default=0.5)
    trials: int = Field(default=10)
    master_seed: int = Field(default=0)
    algorithms: str = Field(default="sdp,spectral_pw,spectral_sign")

    model_config = SettingsConfigDict(
        env_prefix="SDPCUT_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    @property
    def algorithms_list(self) -> List[str]:
        return [algo.strip() for algo in self.algorithms.split(",") if algo.strip()]

    def setup_directories(self):
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.output_dir.mkdir(parents=True, exist_ok=True)


settings = Settings()
