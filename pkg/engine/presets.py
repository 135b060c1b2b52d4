"""Built-in market parameter presets and JSON parameter files."""
import json
from pathlib import Path
from typing import Union

from engine.errors import UnknownPreset, ValidationError
from engine.market import MarketParams

DEFAULT_PRESET = "us-1961-2023"

# US estimates, monthly data 1961-2023 (annualized).
PRESETS: dict[str, dict] = {
    "us-1961-2023": {
        "delta_r": 0.01254,
        "delta_R": 0.05120,
        "delta_pi_e": 0.03831,
        "kappa1": 0.61921,
        "kappa2": 0.18894,
        "sigma1": [0.02209, 0.0, 0.0, 0.0],
        "sigma2": [-0.00673, 0.01408, 0.0, 0.0],
        "sigma_Pi": [0.00042, 0.00207, 0.01363, 0.0],
        "sigma_S": [-0.01974, -0.01785, -0.00793, 0.15410],
        "mu0": 0.046,
        "mu1": [-1.97, -1.41],
        "Lambda0": [0.00487, -0.17007, 0.0, 0.27943],
        "Lambda1": [
            [-9.92002, 0.0],
            [0.0, -9.98001],
            [0.0, 0.0],
            [-14.05465, -10.30593],
        ],
    },
}


def available_presets() -> list[str]:
    """Names of the built-in presets."""
    return sorted(PRESETS)


def load_preset(name: str = DEFAULT_PRESET) -> MarketParams:
    """Return the named preset as MarketParams.

    Raises:
        UnknownPreset: If no preset has that name
    """
    try:
        data = PRESETS[name]
    except KeyError:
        raise UnknownPreset(
            f"Unknown preset: {name!r} (available: {', '.join(available_presets())})"
        ) from None
    return MarketParams.from_dict(data)


def load_params_file(path: Union[str, Path]) -> MarketParams:
    """Read market parameters from a JSON key-value file.

    The file may hold the parameters at the top level or under a "params"
    key (as written by the calibration run).

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValidationError: If the content is not a valid parameter set
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Parameter file not found: {path}")
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ValidationError(f"Parameter file is not valid JSON: {e}") from e
    if isinstance(data, dict) and "params" in data:
        data = data["params"]
    if not isinstance(data, dict):
        raise ValidationError(f"Parameter file must contain a JSON object: {path}")
    return MarketParams.from_dict(data)


def dump_params_file(path: Union[str, Path], params: MarketParams, **extra) -> None:
    """Write market parameters (plus optional extra sections) as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"params": params.to_dict(), **extra}
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
