"""
RunConfig: the JSON run document, defaults read from config/master_config.json,
with dotted `section.key=value` overrides and strict key checking.
"""
import copy
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import numpy as np

from config.bayesmg_config import CONFIG_DIR
from modules.bpmf import BpmfHyper
from modules.errors import ConfigError
from modules.gibbs import GibbsConfig, Hyperparams, parse_eta2_mode
from modules.map_init import SolverConfig

logger = logging.getLogger(__name__)

DEFAULTS_PATH = CONFIG_DIR / "master_config.json"


def _load_document(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


# every default lives in the shipped master config
DEFAULTS: Dict[str, Dict[str, Any]] = _load_document(DEFAULTS_PATH)

# CLI flag -> dotted key
FLAG_KEYS = {
    "seed": "run.seed",
    "iters": "gibbs.total_iters",
    "burn_in": "gibbs.burn_in",
    "thin": "gibbs.thin",
    "rank": "prior.rank",
    "eta2": "gibbs.eta2_mode",
    "chains": "gibbs.n_chains",
    "out_dir": "run.out_dir",
}


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


class RunConfig:
    """Starts from DEFAULTS; documents and overrides may only replace known keys."""

    def __init__(self, sections: Optional[Dict[str, Dict[str, Any]]] = None, source: Optional[Path] = None):
        self.sections = copy.deepcopy(DEFAULTS)
        self.source = source
        if sections:
            self.merge(sections)

    def merge(self, document: Dict[str, Any]):
        if not isinstance(document, dict):
            raise ConfigError("config document must be a JSON object of sections")
        for section, values in document.items():
            if section not in self.sections:
                raise ConfigError(f"unknown config section '{section}'")
            if not isinstance(values, dict):
                raise ConfigError(f"config section '{section}' must be an object")
            for key, value in values.items():
                self.set(f"{section}.{key}", value)

    def set(self, dotted: str, value: Any):
        section, _, key = dotted.partition(".")
        if section not in self.sections or key not in self.sections[section]:
            raise ConfigError(f"unknown config key '{dotted}'")
        self.sections[section][key] = value

    def get(self, dotted: str) -> Any:
        section, _, key = dotted.partition(".")
        try:
            return self.sections[section][key]
        except KeyError:
            raise ConfigError(f"unknown config key '{dotted}'") from None

    def apply_overrides(self, overrides: Iterable[str]):
        for item in overrides or ():
            if "=" not in item:
                raise ConfigError(f"override must look like section.key=value, got {item!r}")
            dotted, text = item.split("=", 1)
            self.set(dotted.strip(), _parse_value(text.strip()))

    def apply_flags(self, flags: Dict[str, Any]):
        """Dedicated CLI flags win over the document and --set overrides; None means unset."""
        for name, dotted in FLAG_KEYS.items():
            value = flags.get(name)
            if value is not None:
                self.set(dotted, str(value) if name == "out_dir" else value)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return copy.deepcopy(self.sections)

    @property
    def seed(self) -> int:
        return int(self.get("run.seed"))

    def output_dir(self, default: Union[str, Path]) -> Path:
        """run.out_dir when set, else `default`; created on demand."""
        out = self.get("run.out_dir")
        path = Path(out) if out else Path(default)
        path.mkdir(parents=True, exist_ok=True)
        return path

    # -- typed views -------------------------------------------------------

    def gibbs_config(self) -> GibbsConfig:
        g = self.sections["gibbs"]
        mode, value = parse_eta2_mode(str(g["eta2_mode"]))
        return _build(GibbsConfig, total_iters=g["total_iters"], burn_in=g["burn_in"], thin=g["thin"],
                      eta2_mode=mode, eta2_value=value, eta2_init=g["eta2_init"], n_chains=g["n_chains"], seed=self.seed,
                      mh_steps=g["mh_steps"], t_df=g["t_df"], vmf_max_proposals=g["vmf_max_proposals"])

    def solver_config(self) -> SolverConfig:
        return _build(SolverConfig, **self.sections["solver"])

    def hyperparams(self) -> Hyperparams:
        return _build(Hyperparams, **self.sections["prior"])

    def bpmf_hyper(self, rank: Optional[int] = None) -> BpmfHyper:
        b = self.sections["bpmf"]
        rank = rank if rank is not None else self.sections["prior"]["rank"]
        W = None if rank is None else float(b["w_scale"]) * np.eye(int(rank))
        return _build(BpmfHyper, rank=rank, beta=b["beta"], W=W, nu=b["nu"],
                      alpha_eta2=b["alpha_eta2"], beta_eta2=b["beta_eta2"])


def _build(cls, **kwargs):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid value for {cls.__name__}: {exc}") from exc


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = (),
                    flags: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Defaults <- JSON document <- --set overrides <- dedicated flags."""
    config = RunConfig()
    if path is not None:
        path = Path(path)
        config.merge(_load_document(path))
        config.source = path
    config.apply_overrides(overrides)
    if flags:
        config.apply_flags(flags)
    logger.debug(f"Run config loaded from {config.source or 'defaults'}")
    return config
