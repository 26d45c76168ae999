//! Writing run artifacts to disk.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stackemu_core::io::{write_drop_csv, write_drop_pgm, write_field_csv, write_layer_pgm};
use stackemu_core::sensors::write_placement_csv;

use crate::error::{ErrorKind, HarnessError, Stage};
use crate::scenario::ScenarioRun;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Pgm,
    Text,
}

impl FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "pgm" => Ok(Format::Pgm),
            "text" => Ok(Format::Text),
            _ => Err(HarnessError::new(
                Stage::Export,
                ErrorKind::Validation,
                format!("unknown export format '{s}' (csv, pgm, text)"),
            )),
        }
    }
}

/// `prefix` followed by `_name`, or `name` inside it when it names a
/// directory.
pub fn artifact_path(prefix: &Path, name: &str) -> PathBuf {
    let s = prefix.as_os_str().to_string_lossy();
    if s.ends_with('/') || s.ends_with(std::path::MAIN_SEPARATOR) || prefix.is_dir() {
        prefix.join(name)
    } else {
        PathBuf::from(format!("{s}_{name}"))
    }
}

type Writer<'a> = Box<dyn Fn(BufWriter<File>) -> Result<(), HarnessError> + 'a>;

fn plan<'a>(run: &'a ScenarioRun, format: Format) -> Vec<(String, Writer<'a>)> {
    let a = &run.artifacts;
    let role = |l: usize| a.stack.layers[l].role;
    let model = |e| HarnessError::model(Stage::Export, e);
    let mut out: Vec<(String, Writer<'a>)> = Vec::new();
    match format {
        Format::Text => {
            out.push((
                "report.toml".into(),
                Box::new(move |mut w| {
                    use std::io::Write;
                    w.write_all(run.report.to_text().as_bytes())
                        .and_then(|_| w.flush())
                        .map_err(|e| HarnessError::new(Stage::Export, ErrorKind::Io, e.to_string()))
                }),
            ));
        }
        Format::Csv => {
            out.push((
                "steady_field.csv".into(),
                Box::new(move |w| write_field_csv(&a.steady, &a.grid, w).map_err(model)),
            ));
            if let Some(f) = &a.final_field {
                out.push((
                    "final_field.csv".into(),
                    Box::new(move |w| write_field_csv(f, &a.grid, w).map_err(model)),
                ));
            }
            if !a.sensor_sites.is_empty() {
                out.push((
                    "sensors.csv".into(),
                    Box::new(move |w| {
                        write_placement_csv(&a.sensor_sites, w)
                            .map_err(|e| HarnessError::new(Stage::Export, ErrorKind::Io, e.to_string()))
                    }),
                ));
            }
            if let Some((pdn, drop)) = &a.pdn {
                out.push((
                    "pdn_drop.csv".into(),
                    Box::new(move |w| write_drop_csv(pdn, drop, w).map_err(model)),
                ));
            }
        }
        Format::Pgm => {
            let ambient = a.stack.ambient_temperature_c;
            for l in a.grid.device_layers() {
                out.push((
                    format!("steady_{}.pgm", role(l)),
                    Box::new(move |w| write_layer_pgm(&a.steady, &a.grid, l, ambient, w).map_err(model)),
                ));
            }
            if let Some(f) = &a.final_field {
                for l in a.grid.device_layers() {
                    out.push((
                        format!("final_{}.pgm", role(l)),
                        Box::new(move |w| write_layer_pgm(f, &a.grid, l, ambient, w).map_err(model)),
                    ));
                }
            }
            if let Some((pdn, drop)) = &a.pdn {
                for l in pdn.layers() {
                    out.push((
                        format!("drop_{}.pgm", role(l)),
                        Box::new(move |w| write_drop_pgm(pdn, drop, l, w).map_err(model)),
                    ));
                }
            }
        }
    }
    out
}

/// Writes the artifacts of `format` next to `prefix` and returns their
/// paths. Nothing is written when any target exists and `force` is off.
pub fn export(
    run: &ScenarioRun,
    format: Format,
    prefix: &Path,
    force: bool,
) -> Result<Vec<PathBuf>, HarnessError> {
    let jobs = plan(run, format);
    let paths: Vec<PathBuf> = jobs.iter().map(|(n, _)| artifact_path(prefix, n)).collect();
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(HarnessError::io(p, "already exists (use --force to overwrite)"));
        }
    }
    for ((_, write), path) in jobs.iter().zip(&paths) {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        write(BufWriter::new(file)).map_err(|e| HarnessError {
            message: format!("{}: {}", path.display(), e.message),
            ..e
        })?;
    }
    Ok(paths)
}
