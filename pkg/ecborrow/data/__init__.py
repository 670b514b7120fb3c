from .datasets import (
    OutcomeKind, ViolationKind, DatasetViolation, DatasetValidationError,
    RctDataset, EcDataset, CombinedDataset,
    collect_violations, validate, combine, controls_only, require_arms,
)
from .io import read_rct_csv, read_ec_csv, write_rct_csv, write_ec_csv, write_frame, write_json
