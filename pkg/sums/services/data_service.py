"""Reading panel/covariate files and writing run outputs."""

import glob
import hashlib
import json
import logging
import os
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import yaml

from ..config import DataConfig
from ..core.model import (
    MISSING,
    PanelDataset,
    ProcessSpec,
    SeriesData,
    StudyDesign,
    SubjectData,
)
from ..exceptions import DataValidationError, ValidationError

logger = logging.getLogger(__name__)

PANEL_FILE = "panel.csv"
COVARIATES_FILE = "covariates.csv"
COVARIATES_TV_FILE = "covariates_tv.csv"
DESIGN_FILE = "design.yaml"
SAMPLES_FILE = "samples.jsonl"
INPUT_FILES = (PANEL_FILE, COVARIATES_FILE, COVARIATES_TV_FILE, DESIGN_FILE)
FLOAT_FORMAT = "%.17g"

PANEL_COLUMNS = ["subject_id", "process", "time", "state"]
COVARIATE_COLUMNS = ["subject_id", "name", "value"]
COVARIATE_TV_COLUMNS = ["subject_id", "process", "time", "name", "value"]

CovariateTable = Dict[Tuple[str, str], float]
TvLookup = Dict[Tuple[str, str, float, str], float]


def _row(index: int) -> int:
    """File line number of a data-frame row (header is line 1)."""
    return int(index) + 2


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_csv(frame: pd.DataFrame, path: str) -> None:
    """CSV with 17 significant digits for every float."""
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def write_json(data: Any, path: str, atomic: bool = False) -> None:
    """JSON with round-trip exact floats.

    ``atomic`` writes a temp file and renames it.
    """
    target = path + ".tmp" if atomic else path
    with open(target, "w", encoding="utf-8") as handle:
        json.dump(data, handle, indent=2)
        handle.write("\n")
    if atomic:
        os.replace(target, path)


def write_yaml(data: Any, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(data, handle, sort_keys=False)


class DataService:
    """Service for panel-data ingestion and output files."""

    def __init__(self, config: Optional[DataConfig] = None):
        self.config = config or DataConfig()
        self.transform: Dict[str, Dict[str, float]] = {}

    # -- reading -------------------------------------------------------------

    def _read_csv(
        self, path: str, columns: List[str], required: bool = True
    ) -> Optional[pd.DataFrame]:
        if not os.path.exists(path):
            if required:
                raise DataValidationError(f"missing input file {path}")
            return None
        file_name = os.path.basename(path)
        try:
            frame = pd.read_csv(
                path, dtype={"subject_id": str, "process": str, "name": str}
            )
        except (
            pd.errors.ParserError,
            pd.errors.EmptyDataError,
            UnicodeDecodeError,
        ) as e:
            raise DataValidationError(f"{file_name}: cannot parse CSV: {e}")
        missing = [column for column in columns if column not in frame.columns]
        if missing:
            raise DataValidationError(f"{file_name}: missing columns {missing}")
        return frame[columns]

    def _numeric(
        self,
        frame: pd.DataFrame,
        column: str,
        file_name: str,
        allow_missing: bool = False,
    ) -> pd.Series:
        values = pd.to_numeric(frame[column], errors="coerce")
        bad = values.isna() & (frame[column].notna() | (not allow_missing))
        if bad.any():
            index = bad.idxmax()
            raise DataValidationError(
                f"{file_name} row {_row(index)}: {column} value "
                f"{frame.at[index, column]!r} is not numeric"
            )
        return values

    def read_panel(self, data_dir: str) -> pd.DataFrame:
        frame = self._read_csv(os.path.join(data_dir, PANEL_FILE), PANEL_COLUMNS)
        frame = frame.copy()
        frame["time"] = self._numeric(frame, "time", PANEL_FILE)
        states = self._numeric(frame, "state", PANEL_FILE, allow_missing=True)
        observed = states.notna()
        bad = observed & ((states < 1) | (states != np.floor(states)))
        if bad.any():
            index = bad.idxmax()
            raise DataValidationError(
                f"{PANEL_FILE} row {_row(index)}: state "
                f"{frame.at[index, 'state']!r} must be an integer >= 1"
            )
        frame["state"] = states
        unnamed = frame["subject_id"].isna() | frame["process"].isna()
        if unnamed.any():
            raise DataValidationError(
                f"{PANEL_FILE} row {_row(unnamed.idxmax())}: "
                "subject_id and process are required"
            )
        return frame

    def read_design(self, data_dir: str) -> Optional[StudyDesign]:
        path = os.path.join(data_dir, DESIGN_FILE)
        if not os.path.exists(path):
            return None
        with open(path, "r", encoding="utf-8") as handle:
            try:
                data = yaml.safe_load(handle)
            except yaml.YAMLError as e:
                raise DataValidationError(f"{DESIGN_FILE}: invalid YAML: {e}")
        try:
            return StudyDesign.from_dict(data or {})
        except ValidationError as e:
            raise DataValidationError(f"{DESIGN_FILE}: {e}")

    def infer_design(
        self,
        panel: pd.DataFrame,
        covariates: Optional[pd.DataFrame],
        covariates_tv: Optional[pd.DataFrame],
    ) -> StudyDesign:
        """Every process a response, d = largest observed state, shared covariates."""
        names = list(covariates["name"].unique()) if covariates is not None else []
        specs = []
        for process in panel["process"].unique():
            states = panel.loc[panel["process"] == process, "state"].dropna()
            tv_names: List[str] = []
            if covariates_tv is not None:
                in_process = covariates_tv["process"] == process
                tv_names = list(covariates_tv.loc[in_process, "name"].unique())
            specs.append(ProcessSpec(
                name=str(process),
                n_states=max(2, int(states.max()) if len(states) else 2),
                covariates=tuple(names),
                tv_covariates=tuple(tv_names),
            ))
        return StudyDesign(specs)

    def load_dataset(self, data_dir: str) -> PanelDataset:
        """Read panel.csv, covariates.csv, covariates_tv.csv and design.yaml.

        Raises:
            DataValidationError: malformed files, with the offending row number
        """
        panel = self.read_panel(data_dir)
        covariates = self._read_csv(
            os.path.join(data_dir, COVARIATES_FILE), COVARIATE_COLUMNS, required=False
        )
        covariates_tv = self._read_csv(
            os.path.join(data_dir, COVARIATES_TV_FILE),
            COVARIATE_TV_COLUMNS,
            required=False,
        )
        if covariates is not None:
            covariates = covariates.copy()
            covariates["value"] = self._numeric(covariates, "value", COVARIATES_FILE)
        if covariates_tv is not None:
            covariates_tv = covariates_tv.copy()
            for column in ("time", "value"):
                covariates_tv[column] = self._numeric(
                    covariates_tv, column, COVARIATES_TV_FILE
                )

        design = self.read_design(data_dir)
        if design is None:
            design = self.infer_design(panel, covariates, covariates_tv)
        declared = {spec.name for spec in design.processes}
        unknown = set(panel["process"].unique()) - declared
        if unknown:
            raise DataValidationError(
                f"{PANEL_FILE}: processes {sorted(unknown)} are not in the study design"
            )

        x_table = self._covariate_table(covariates)
        tv_lookup = self._tv_lookup(covariates_tv)
        subjects = []
        for subject_id, rows in panel.groupby("subject_id", sort=False):
            subject_id = str(subject_id)
            series: List[Optional[SeriesData]] = []
            x_vectors = []
            for spec in design.processes:
                x_vectors.append(self._subject_x(x_table, subject_id, spec))
                process_rows = rows[rows["process"] == spec.name]
                series.append(
                    self._series(process_rows, subject_id, spec, tv_lookup)
                )
            subjects.append(
                SubjectData(subject_id=subject_id, series=series, x=x_vectors)
            )

        self._standardise(subjects, design)
        try:
            return PanelDataset(design, subjects)
        except ValidationError as e:
            raise DataValidationError(str(e))

    def _covariate_table(self, covariates: Optional[pd.DataFrame]) -> CovariateTable:
        if covariates is None:
            return {}
        duplicated = covariates.duplicated(["subject_id", "name"])
        if duplicated.any():
            raise DataValidationError(
                f"{COVARIATES_FILE} row {_row(duplicated.idxmax())}: "
                "duplicate covariate entry"
            )
        return {
            (str(s), str(n)): float(v)
            for s, n, v in zip(
                covariates["subject_id"], covariates["name"], covariates["value"]
            )
        }

    def _tv_lookup(self, covariates_tv: Optional[pd.DataFrame]) -> TvLookup:
        if covariates_tv is None:
            return {}
        return {
            (str(s), str(p), float(t), str(n)): float(v)
            for s, p, t, n, v in zip(
                covariates_tv["subject_id"],
                covariates_tv["process"],
                covariates_tv["time"],
                covariates_tv["name"],
                covariates_tv["value"],
            )
        }

    def _subject_x(
        self, x_table: CovariateTable, subject_id: str, spec: ProcessSpec
    ) -> np.ndarray:
        values = []
        for name in spec.covariates:
            if (subject_id, name) not in x_table:
                raise DataValidationError(
                    f"{COVARIATES_FILE}: subject {subject_id} has no value for {name!r}"
                )
            values.append(x_table[(subject_id, name)])
        return np.array(values, dtype=float)

    def _series(
        self,
        rows: pd.DataFrame,
        subject_id: str,
        spec: ProcessSpec,
        tv_lookup: TvLookup,
    ) -> Optional[SeriesData]:
        if rows.empty:
            return None
        rows = rows.sort_values("time", kind="stable")
        duplicated = rows["time"].duplicated()
        if duplicated.any():
            raise DataValidationError(
                f"{PANEL_FILE} row {_row(duplicated.idxmax())}: "
                "repeated observation time"
            )
        states = rows["state"]
        if states.iloc[1:].isna().any():
            index = states.iloc[1:].isna().idxmax()
            raise DataValidationError(
                f"{PANEL_FILE} row {_row(index)}: "
                "only the first observation of a series may lack a state"
            )
        too_large = states > spec.n_states
        if too_large.any():
            index = too_large.idxmax()
            raise DataValidationError(
                f"{PANEL_FILE} row {_row(index)}: state {int(states[index])} "
                f"outside 1..{spec.n_states}"
            )
        if len(rows) < 2:
            logger.warning(
                f"Subject {subject_id}, process {spec.name}: "
                "single observation dropped"
            )
            return None
        times = rows["time"].to_numpy(dtype=float)
        z = np.zeros((len(times), len(spec.tv_covariates)))
        for j, t in enumerate(times):
            for q, name in enumerate(spec.tv_covariates):
                key = (subject_id, spec.name, float(t), name)
                if key not in tv_lookup:
                    raise DataValidationError(
                        f"{COVARIATES_TV_FILE}: subject {subject_id}, "
                        f"process {spec.name}, time {t!r} has no value for {name!r}"
                    )
                z[j, q] = tv_lookup[key]
        coded = np.where(states.isna(), MISSING + 1, states.fillna(0)).astype(int) - 1
        return SeriesData(times=times, states=coded, z=z)

    def _standardise(self, subjects: List[SubjectData], design: StudyDesign) -> None:
        """Centre and scale continuous time-homogeneous covariates in place."""
        self.transform = {}
        if not self.config.standardize_covariates or not subjects:
            return
        names = list(dict.fromkeys(
            name for spec in design.processes for name in spec.covariates
        ))
        for name in names:
            slots = [
                (h, spec.covariates.index(name))
                for h, spec in enumerate(design.processes)
                if name in spec.covariates
            ]
            first_h, first_q = slots[0]
            values = np.array([subject.x[first_h][first_q] for subject in subjects])
            if np.unique(values).size <= 2:
                continue
            mean, sd = float(values.mean()), float(values.std(ddof=1))
            if sd == 0:
                continue
            self.transform[name] = {"mean": mean, "sd": sd}
            for subject in subjects:
                for h, q in slots:
                    subject.x[h][q] = (subject.x[h][q] - mean) / sd
        if self.transform:
            logger.warning(
                f"Standardised continuous covariates: {', '.join(self.transform)}"
            )

    # -- writing -------------------------------------------------------------

    def dataset_frames(self, dataset: PanelDataset) -> Dict[str, pd.DataFrame]:
        """Long-format frames for panel.csv, covariates.csv and covariates_tv.csv."""
        design = dataset.design
        panel_rows, cov_rows, tv_rows = [], [], []
        for subject in dataset.subjects:
            sid = subject.subject_id
            written = set()
            for h, spec in enumerate(design.processes):
                for q, name in enumerate(spec.covariates):
                    if name not in written:
                        cov_rows.append((sid, name, float(subject.x[h][q])))
                        written.add(name)
                series = subject.series[h]
                if series is None:
                    continue
                for j, t in enumerate(series.times):
                    state = series.states[j]
                    coded = None if state == MISSING else int(state) + 1
                    panel_rows.append((sid, spec.name, float(t), coded))
                    for q, name in enumerate(spec.tv_covariates):
                        value = float(series.z[j, q])
                        tv_rows.append((sid, spec.name, float(t), name, value))
        panel = pd.DataFrame(panel_rows, columns=PANEL_COLUMNS)
        panel["state"] = panel["state"].astype("Int64")
        return {
            PANEL_FILE: panel,
            COVARIATES_FILE: pd.DataFrame(cov_rows, columns=COVARIATE_COLUMNS),
            COVARIATES_TV_FILE: pd.DataFrame(tv_rows, columns=COVARIATE_TV_COLUMNS),
        }

    def write_dataset(self, dataset: PanelDataset, out_dir: str) -> List[str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for file_name, frame in self.dataset_frames(dataset).items():
            path = os.path.join(out_dir, file_name)
            write_csv(frame, path)
            paths.append(path)
        design_path = os.path.join(out_dir, DESIGN_FILE)
        write_yaml(dataset.design.to_dict(), design_path)
        paths.append(design_path)
        return paths

    def input_digests(self, data_dir: str) -> Dict[str, str]:
        return {
            name: sha256_file(os.path.join(data_dir, name))
            for name in INPUT_FILES
            if os.path.exists(os.path.join(data_dir, name))
        }

    # -- samples -------------------------------------------------------------

    def sample_files(self, samples_dir: str) -> List[str]:
        """``chain_*/samples.jsonl`` in chain order, or a single samples file."""
        if os.path.isfile(samples_dir):
            return [samples_dir]
        files = glob.glob(os.path.join(samples_dir, "chain_*", SAMPLES_FILE))
        files.sort(key=_chain_number)
        direct = os.path.join(samples_dir, SAMPLES_FILE)
        if not files and os.path.exists(direct):
            files = [direct]
        return files

    def read_samples(self, samples_dir: str) -> List[Dict[str, Any]]:
        """Pool every saved record under ``samples_dir``.

        Raises:
            DataValidationError: no samples file or no saved iterations
        """
        files = self.sample_files(samples_dir)
        if not files:
            raise DataValidationError(f"no {SAMPLES_FILE} found under {samples_dir}")
        records = []
        for path in files:
            with open(path, "r", encoding="utf-8") as handle:
                for number, line in enumerate(handle, start=1):
                    if not line.strip():
                        continue
                    try:
                        records.append(json.loads(line))
                    except json.JSONDecodeError as e:
                        raise DataValidationError(
                            f"{path} line {number}: invalid JSON: {e}"
                        )
        if not records:
            raise DataValidationError("no saved iterations")
        return records

    def read_manifest(self, samples_dir: str) -> Dict[str, Any]:
        if os.path.isdir(samples_dir):
            path = samples_dir
        else:
            path = os.path.dirname(samples_dir)
        manifest_path = os.path.join(path, "manifest.json")
        if not os.path.exists(manifest_path):
            raise DataValidationError(
                f"no manifest.json next to the samples in {path}"
            )
        with open(manifest_path, "r", encoding="utf-8") as handle:
            return json.load(handle)


def _chain_number(path: str) -> int:
    """Index k of a ``chain_<k>/samples.jsonl`` path."""
    return int(os.path.basename(os.path.dirname(path)).split("_")[1])
