//! Output files: provenance headers, report text and plot scripts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::RunConfig;

pub struct Output {
    dir: PathBuf,
    provenance: Vec<(String, String)>,
    plot: bool,
}

impl Output {
    pub fn new(dir: &Path, cfg: &RunConfig, command: &str, plot: bool) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let provenance = vec![
            ("tool".into(), format!("qdyne {}", env!("CARGO_PKG_VERSION"))),
            ("command".into(), command.into()),
            ("config_sha256".into(), cfg.hash()),
            ("seed".into(), cfg.seed.to_string()),
        ];
        Ok(Self { dir: dir.to_path_buf(), provenance, plot })
    }

    /// Provenance without the seed, for files that record their own.
    pub fn provenance_unseeded(&self) -> Vec<(String, String)> {
        self.provenance.iter().filter(|(k, _)| k != "seed").cloned().collect()
    }

    pub fn provenance(&self) -> &[(String, String)] {
        &self.provenance
    }

    pub fn write(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut dyn Write) -> qdyne_core::Result<()>,
    ) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush().with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let text = text.to_string();
        self.write(name, move |w| Ok(w.write_all(text.as_bytes())?))
    }

    /// Gnuplot script plotting column `y` against column `x` of `csv`.
    pub fn plot_script(&mut self, csv: &str, x: usize, y: usize, xlabel: &str, ylabel: &str, logx: bool) -> Result<()> {
        if !self.plot {
            return Ok(());
        }
        let stem = csv.trim_end_matches(".csv");
        let script = format!(
            "set datafile separator ','\nset datafile commentschars '#'\nset key autotitle columnhead\n\
             set xlabel '{xlabel}'\nset ylabel '{ylabel}'\n{}set terminal pngcairo size 900,600\n\
             set output '{stem}.png'\nplot '{csv}' using {x}:{y} with lines\n",
            if logx { "set logscale x\n" } else { "" }
        );
        self.write_text(&format!("{stem}.gp"), &script)?;
        Ok(())
    }
}

/// Prints `key=value` lines to stdout.
pub fn report(pairs: &[(&str, String)]) {
    for (k, v) in pairs {
        println!("{k}={v}");
    }
}
