//! Artifact writers: field CSVs, checkpoints and atomic file replacement.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use duct_pinn::network::write_checkpoint;
use duct_pinn::{FieldSample, MlpParams};

use crate::CliError;

pub const CSV_HEADER: &str = "x,psi_re,psi_im,xi_re,xi_im,Z_re,Z_im,valid_Z";

/// Writes `contents` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Runtime(format!("not a file path: {}", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

fn num(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a string");
}

/// Field samples in the fixed CSV schema; invalid impedance samples carry `NaN`.
pub fn fields_csv(samples: &[FieldSample]) -> String {
    let mut out = String::with_capacity(160 * (samples.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in samples {
        for (i, v) in [s.x, s.psi.re, s.psi.im, s.xi.re, s.xi.im, s.z.re, s.z.im]
            .into_iter()
            .enumerate()
        {
            if i > 0 {
                out.push(',');
            }
            num(&mut out, v);
        }
        out.push_str(if s.valid_z { ",1\n" } else { ",0\n" });
    }
    out
}

pub fn write_checkpoint_file(path: &Path, params: &MlpParams, seed: u64) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, seed)?;
    write_atomic(path, &buf)
}
