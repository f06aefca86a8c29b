use std::fs;
use std::path::{Path, PathBuf};

use chb_core::geometry::{Geometry, Mode};

use crate::config::Config;
use crate::error::CliResult;

/// Output directory for one run.
pub struct Output {
    pub dir: PathBuf,
}

impl Output {
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Resolved configuration plus a `[run]` table.
    pub fn manifest(&self, cfg: &Config, subcommand: &str, overrides: &[String]) -> CliResult<()> {
        let mut table = cfg.table.clone();
        let mut run = toml::Table::new();
        run.insert("subcommand".into(), subcommand.into());
        run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        run.insert("overrides".into(), toml::Value::Array(overrides.iter().map(|s| s.as_str().into()).collect()));
        run.insert("threads".into(), (rayon::current_num_threads() as i64).into());
        table.insert("run".into(), toml::Value::Table(run));
        fs::write(self.path("manifest.toml"), toml::to_string_pretty(&table).unwrap_or_default())?;
        Ok(())
    }

    /// Header `nx ny lx ly`, then one line of values per grid row.
    pub fn field(&self, name: &str, geom: &Geometry, values: &[f64], row_len: usize) -> CliResult<()> {
        let mut s = format!("{} {} {} {}\n", geom.nx, geom.ny, geom.lx, geom.ly);
        for row in values.chunks(row_len) {
            s.push_str(&row.iter().map(|v| num(*v)).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        fs::write(self.path(name), s)?;
        Ok(())
    }
}

pub fn row_len(geom: &Geometry) -> usize {
    match geom.mode {
        Mode::Strip2d => geom.nx,
        Mode::Interval1d => 1,
    }
}

/// Shortest round-trip representation.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}
