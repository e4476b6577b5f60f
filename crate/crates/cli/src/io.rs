use std::fs;
use std::path::{Path, PathBuf};

use dfosr::data::FunctionalDataset;
use nalgebra::DMatrix;

use crate::error::CliError;

struct Table {
    header: Vec<String>,
    /// Data rows with their 1-based line numbers.
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::input(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_error(path, i + 1, 0, e.to_string()))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        records.push((i + 1, rec.iter().map(str::to_string).collect::<Vec<_>>()));
    }
    let (_, header) = records
        .first()
        .cloned()
        .ok_or_else(|| parse_error(path, 1, 0, "file is empty".into()))?;
    let width = header.len();
    let mut rows = Vec::with_capacity(records.len() - 1);
    for (line, rec) in records.into_iter().skip(1) {
        if rec.len() != width {
            return Err(parse_error(
                path,
                line,
                rec.len().min(width) + 1,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        rows.push((line, rec));
    }
    Ok(Table { header, rows })
}

fn parse_error(path: &Path, line: usize, column: usize, message: String) -> CliError {
    CliError::Parse {
        path: PathBuf::from(path),
        line,
        column,
        message,
    }
}

fn parse_cell(path: &Path, line: usize, column: usize, cell: &str) -> Result<f64, CliError> {
    cell.parse::<f64>()
        .map_err(|_| parse_error(path, line, column, format!("'{cell}' is not a number")))
}

/// Read a wide response file (first column time label, one column per
/// observation point, empty cells missing) and an optional predictor file
/// (first column time label, one column per predictor).
pub fn load_dataset(response: &Path, predictors: Option<&Path>, scale: bool) -> Result<FunctionalDataset, CliError> {
    let table = read_table(response)?;
    if table.header.len() < 2 {
        return Err(parse_error(response, 1, 2, "no observation-point columns".into()));
    }
    let points = table.header[1..]
        .iter()
        .enumerate()
        .map(|(c, h)| parse_cell(response, 1, c + 2, h))
        .collect::<Result<Vec<_>, _>>()?;
    let t = table.rows.len();
    let m = points.len();
    let mut y = DMatrix::from_element(t, m, f64::NAN);
    let mut labels = Vec::with_capacity(t);
    for (i, (line, row)) in table.rows.iter().enumerate() {
        labels.push(row[0].clone());
        for j in 0..m {
            let cell = &row[j + 1];
            if !cell.is_empty() {
                let v = parse_cell(response, *line, j + 2, cell)?;
                if v.is_nan() {
                    return Err(parse_error(response, *line, j + 2, "use an empty cell for missing values".into()));
                }
                y[(i, j)] = v;
            }
        }
    }

    let (x, names) = match predictors {
        None => (DMatrix::zeros(t, 0), Vec::new()),
        Some(path) => {
            let table = read_table(path)?;
            if table.rows.len() != t {
                return Err(parse_error(
                    path,
                    table.rows.len() + 1,
                    1,
                    format!("{} predictor rows for {t} response rows", table.rows.len()),
                ));
            }
            let p = table.header.len() - 1;
            let mut x = DMatrix::zeros(t, p);
            for (i, (line, row)) in table.rows.iter().enumerate() {
                if row[0] != labels[i] {
                    return Err(parse_error(
                        path,
                        *line,
                        1,
                        format!("time label '{}' does not match response label '{}'", row[0], labels[i]),
                    ));
                }
                for j in 0..p {
                    x[(i, j)] = parse_cell(path, *line, j + 2, &row[j + 1])?;
                }
            }
            (x, table.header[1..].to_vec())
        }
    };
    let mut data = FunctionalDataset::with_labels(points, y, x, labels, names)?;
    if scale {
        data.standardize_predictors();
    }
    Ok(data)
}

fn write_csv(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Output {
        path: path.into(),
        source: e.into(),
    })?;
    let wrap = |e: csv::Error| CliError::Output {
        path: path.into(),
        source: e.into(),
    };
    w.write_record(&header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(CliError::output(path))
}

/// Write a dataset in the format read by [`load_dataset`]. The predictor
/// file is skipped when `predictors` is `None`.
pub fn save_dataset(data: &FunctionalDataset, response: &Path, predictors: Option<&Path>) -> Result<(), CliError> {
    let mut header = vec!["time".to_string()];
    header.extend(data.points.iter().map(|p| format!("{p}")));
    let rows = (0..data.n_times()).map(|i| {
        let mut row = vec![data.time_labels[i].clone()];
        row.extend(data.response.row(i).iter().map(|v| if v.is_nan() { String::new() } else { format!("{v}") }));
        row
    });
    write_csv(response, header, rows)?;
    if let Some(path) = predictors {
        let mut header = vec!["time".to_string()];
        header.extend(data.predictor_names.iter().cloned());
        let rows = (0..data.n_times()).map(|i| {
            let mut row = vec![data.time_labels[i].clone()];
            row.extend(data.predictors.row(i).iter().map(|v| format!("{v}")));
            row
        });
        write_csv(path, header, rows)?;
    }
    Ok(())
}

/// Extend the observation grid with `n` equally spaced points over its
/// range; the new cells are missing and get imputed by the sampler.
pub fn augment_grid(data: &FunctionalDataset, n: usize) -> Result<FunctionalDataset, CliError> {
    if n < 2 {
        return Err(CliError::Usage("--grid-points must be at least 2".into()));
    }
    let lo = data.points[0];
    let hi = data.points[data.points.len() - 1];
    let tol = 1e-9 * (hi - lo).abs().max(1.0);
    let mut points = data.points.clone();
    for i in 0..n {
        let p = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        if points.iter().all(|q| (q - p).abs() > tol) {
            points.push(p);
        }
    }
    points.sort_by(f64::total_cmp);
    let t = data.n_times();
    let mut y = DMatrix::from_element(t, points.len(), f64::NAN);
    for (j, p) in points.iter().enumerate() {
        if let Some(src) = data.points.iter().position(|q| q == p) {
            y.set_column(j, &data.response.column(src));
        }
    }
    Ok(FunctionalDataset::with_labels(
        points,
        y,
        data.predictors.clone(),
        data.time_labels.clone(),
        data.predictor_names.clone(),
    )?)
}
