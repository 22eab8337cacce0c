//! The Harrison–Rubinfeld Boston housing table (506 tracts), bundled.

use crate::dataset::{load_csv_from_reader, Column, ColumnSpec, Dataset};
use crate::Result;

pub const BOSTON_CSV: &str = include_str!("../data/boston.csv");

pub const EXPLANATORY: [&str; 13] = [
    "CRIM", "ZN", "INDUS", "CHAS", "NOX", "RM", "AGE", "DIS", "RAD", "TAX", "PTRATIO", "B", "LSTAT",
];
pub const DEPENDENT: &str = "MEDV";
pub const ID: &str = "tract";
/// Average rooms per dwelling.
pub const ROOMS: &str = "RM";

pub fn column_spec() -> ColumnSpec {
    ColumnSpec::new(DEPENDENT, EXPLANATORY.iter().map(|s| s.to_string()).collect()).with_id(ID)
}

/// All 13 explanatory columns against `ln(MEDV)`.
pub fn load() -> Result<Dataset> {
    let (d, _) = load_csv_from_reader(BOSTON_CSV.as_bytes(), &column_spec())?;
    d.log_transform(Column::Dependent)
}
