use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use entropy_bounds::instances::{
    load_matrix, save_matrix, DoptInstance, InstanceManifest, MatrixFormat, MespInstance,
};

use crate::usage;

pub enum Instance {
    Dopt(DoptInstance),
    Mesp(MespInstance),
}

impl Instance {
    pub fn n(&self) -> usize {
        match self {
            Instance::Dopt(i) => i.n(),
            Instance::Mesp(i) => i.n(),
        }
    }

    pub fn s(&self) -> usize {
        match self {
            Instance::Dopt(i) => i.s,
            Instance::Mesp(i) => i.s,
        }
    }
}

/// Instance together with the manifest it was read from.
pub struct Loaded {
    pub instance: Instance,
    pub manifest: InstanceManifest,
    pub manifest_path: Option<PathBuf>,
}

/// Matrix file stored next to a manifest: `stem.json` pairs with `stem.txt` or `stem.csv`.
pub fn matrix_path_for(manifest_path: &Path, format: MatrixFormat) -> PathBuf {
    manifest_path.with_extension(match format {
        MatrixFormat::Whitespace => "txt",
        MatrixFormat::Csv => "csv",
    })
}

pub fn write_instance(stem: &Path, matrix: &entropy_bounds::matcore::Mat, mut manifest: InstanceManifest) -> Result<PathBuf> {
    let manifest_path = stem.with_extension("json");
    let matrix_path = matrix_path_for(&manifest_path, manifest.format);
    if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    manifest.source_path = matrix_path.file_name().map(|f| f.to_string_lossy().into_owned());
    save_matrix(&matrix_path, matrix, manifest.format)?;
    manifest.write(&manifest_path)?;
    Ok(manifest_path)
}

pub fn load_manifest(path: &Path) -> Result<Loaded> {
    let manifest = InstanceManifest::read(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let matrix_path = match &manifest.source_path {
        Some(p) => {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                path.parent().unwrap_or(Path::new(".")).join(p)
            }
        }
        None => matrix_path_for(path, manifest.format),
    };
    let m = load_matrix(&matrix_path, manifest.format, false)
        .with_context(|| format!("reading matrix {}", matrix_path.display()))?;
    let instance = if manifest.is_mesp() {
        let mut inst = MespInstance::new(m, manifest.s)?;
        inst.kind = manifest.kind;
        inst.seed = manifest.seed;
        inst.gamma = manifest.gamma;
        inst.offset = manifest.offset;
        Instance::Mesp(inst)
    } else {
        let mut inst = DoptInstance::new(m, manifest.s)?;
        inst.kind = manifest.kind;
        inst.seed = manifest.seed;
        Instance::Dopt(inst)
    };
    Ok(Loaded {
        instance,
        manifest,
        manifest_path: Some(path.to_path_buf()),
    })
}

/// Raw matrix file: design rows for `mesp == false`, a covariance otherwise.
pub fn load_raw(path: &Path, s: usize, format: MatrixFormat, skip_header: bool, mesp: bool) -> Result<Loaded> {
    let m = load_matrix(path, format, skip_header).with_context(|| format!("reading matrix {}", path.display()))?;
    let (instance, mut manifest) = if mesp {
        let inst = MespInstance::new(m, s)?;
        let manifest = InstanceManifest::for_mesp(&inst, None);
        (Instance::Mesp(inst), manifest)
    } else {
        let inst = DoptInstance::new(m, s)?;
        let manifest = InstanceManifest::for_dopt(&inst);
        (Instance::Dopt(inst), manifest)
    };
    manifest.source_path = Some(path.display().to_string());
    manifest.format = format;
    Ok(Loaded {
        instance,
        manifest,
        manifest_path: None,
    })
}

pub fn parse_format(s: &str) -> Result<MatrixFormat> {
    match s {
        "whitespace" | "txt" => Ok(MatrixFormat::Whitespace),
        "csv" => Ok(MatrixFormat::Csv),
        other => Err(usage(format!("unknown matrix format {other:?} (expected whitespace or csv)"))),
    }
}
