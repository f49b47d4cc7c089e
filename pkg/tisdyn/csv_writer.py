import hashlib
import json
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import pandas as pd

from tisdyn import errors

FLOAT_FORMAT = "%.9g"

PLOT_FILES = ("plots/behavior.csv", "plots/modes.csv", "plots/dimensions.csv", "plots/ghg.csv")


def write_csv_files(ctx, frames: Mapping[str, pd.DataFrame], base_directory=None) -> List[Path]:
    base_directory = Path(".") if base_directory is None else Path(base_directory)
    written = []
    for file_name, frame in frames.items():
        path = base_directory / file_name
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        except OSError as e:
            raise errors.OutputError(f'Cannot write "{path}": {e.strerror}')
        written.append(path)
    return written


def write_json(ctx, path, document: Mapping) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as f:
            json.dump(document, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise errors.OutputError(f'Cannot write "{path}": {e.strerror}')
    return path


def remove_files(paths) -> None:
    for path in paths:
        try:
            Path(path).unlink()
        except FileNotFoundError:
            pass


def file_digest(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def emit_plot_data(
    ctx,
    base_directory,
    behavior: pd.DataFrame,
    modes: pd.DataFrame,
    dimensions: pd.DataFrame,
    ghg: pd.DataFrame,
) -> List[Path]:
    """
    Long-format series behind the usual figures, one file per family:

        plots/behavior.csv    scenario,window_start,window_end,technology,scope,sum_a,sum_b,creativity,orientation
        plots/modes.csv       scenario,window_start,window_end,pair,scope,mode,beneficiary,victim
        plots/dimensions.csv  scenario,year,technology,dimension,sub_dimension,level
        plots/ghg.csv         scenario,year,technology,annual_mt,cumulative_mt

    GHG rows come sorted by (scenario, year) in the order they were given.
    """
    frames: Dict[str, pd.DataFrame] = dict(zip(PLOT_FILES, (behavior, modes, dimensions, ghg)))
    return write_csv_files(ctx, frames, base_directory)


def read_csv(path, what: Optional[str] = None) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except FileNotFoundError:
        raise errors.ConfigValidationError(f'No {what or "file"} at "{path}".')
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise errors.ConfigValidationError(f'Cannot read {what or "file"} "{path}": {e}')
    except OSError as e:
        raise errors.OutputError(f'Cannot read "{path}": {e.strerror}')
