//! On-disk model container and coefficient dumps.
//!
//! Models are stored as a versioned binary file plus a human-readable JSON
//! sidecar at `<path>.json`. Binary layout (all integers and floats
//! little-endian):
//!
//! ```text
//! magic "GWMODEL\x01" (8 bytes)
//! u32 version = 1
//! u8 kind (0 = plain, 1 = orthogonal)
//! u8 flags (plain: bit0 tangential, bit1 split-shared;
//!           orthogonal: bit0 relative stop criterion)
//! u16 reserved
//! u64 model id, f64 precision
//! u64 tree-json length, tree JSON bytes
//! u64 policy-json length, policy JSON bytes
//! u64 node count, then per node in key order:
//!   u64 scale, u64 index, u64 D,
//!   center (D f64),
//!   u64 d, scaling basis (D*d f64, column-major),
//!   u64 spectrum length, eigenvalues,
//!   u64 d_w, wavelet/new-direction basis (D*d_w f64, column-major),
//!   translation (D f64),
//!   u64 cumulative dim (orthogonal models; 0 otherwise)
//! ```
//!
//! Derived quantities (cached products, leaf paths) are rebuilt on load.
//!
//! Coefficient dumps come in two forms: CSV rows
//! `point_id,scale,index,block_index,value` and a compact binary form with
//! magic `GWCOEFF\x01`.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{Spectrum, SubspaceBasis};
use crate::ortho::{assemble_ortho, OrthoGmraModel, OrthoNode};
use crate::transforms::GwtCoefficients;
use crate::tree::{NodeKey, PartitionTree};
use crate::wavelets::{
    assemble_model, DimensionPolicy, GmraModel, GmraNode, GmraVariants, PrecisionMode,
};

const MODEL_MAGIC: [u8; 8] = *b"GWMODEL\x01";
const COEFF_MAGIC: [u8; 8] = *b"GWCOEFF\x01";

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn bytes(&mut self, v: &[u8]) -> Result<()> {
        self.inner.write_all(v)?;
        Ok(())
    }

    fn vector(&mut self, v: &DVector<f64>) -> Result<()> {
        for &x in v.iter() {
            self.f64(x)?;
        }
        Ok(())
    }

    fn matrix(&mut self, m: &DMatrix<f64>) -> Result<()> {
        for &x in m.iter() {
            // nalgebra iterates column-major, matching the documented layout.
            self.f64(x)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn bytes(&mut self, len: usize) -> Result<Vec<u8>> {
        let mut v = vec![0u8; len];
        self.inner.read_exact(&mut v)?;
        Ok(v)
    }

    fn vector(&mut self, len: usize) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(len);
        for i in 0..len {
            v[i] = self.f64()?;
        }
        Ok(v)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows, cols);
        for c in 0..cols {
            for r in 0..rows {
                m[(r, c)] = self.f64()?;
            }
        }
        Ok(m)
    }
}

#[derive(serde::Serialize)]
struct Sidecar<'a> {
    version: u32,
    kind: &'a str,
    model_id: String,
    epsilon: f64,
    n_points: usize,
    ambient_dim: usize,
    max_scale: usize,
    node_count: usize,
    tree_seed: u64,
    policy: &'a DimensionPolicy,
    variants: Option<GmraVariants>,
    stop_criterion: Option<PrecisionMode>,
    binary_layout: &'a str,
}

const LAYOUT_NOTE: &str =
    "little-endian; f64 payload; bases column-major; see module docs of gmra::storage";

/// Saves a plain model to `path` and its sidecar to `path.json`.
pub fn save_gmra_model(model: &GmraModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = Writer {
        inner: BufWriter::new(std::fs::File::create(path)?),
    };
    w.bytes(&MODEL_MAGIC)?;
    w.u32(1)?;
    let variants = model.variants();
    let flags = u8::from(variants.tangential_corrections)
        | (u8::from(variants.split_shared_wavelets) << 1);
    w.bytes(&[0u8, flags])?;
    w.bytes(&[0u8, 0u8])?;
    w.u64(model.model_id())?;
    w.f64(model.epsilon())?;
    let tree_json = model.tree().to_json_string()?;
    w.u64(tree_json.len() as u64)?;
    w.bytes(tree_json.as_bytes())?;
    let policy_json = serde_json::to_string(model.policy())?;
    w.u64(policy_json.len() as u64)?;
    w.bytes(policy_json.as_bytes())?;

    let nodes: Vec<&GmraNode> = model.nodes().collect();
    w.u64(nodes.len() as u64)?;
    let dim = model.ambient_dim();
    for node in nodes {
        w.u64(node.key.scale as u64)?;
        w.u64(node.key.index as u64)?;
        w.u64(dim as u64)?;
        w.vector(&node.center)?;
        w.u64(node.basis.dim() as u64)?;
        w.matrix(node.basis.matrix())?;
        w.u64(node.spectrum.len() as u64)?;
        for &v in node.spectrum.values() {
            w.f64(v)?;
        }
        w.u64(node.wavelet.dim() as u64)?;
        w.matrix(node.wavelet.matrix())?;
        w.vector(&node.translation)?;
        w.u64(0)?;
    }
    drop(w);

    let sidecar = Sidecar {
        version: 1,
        kind: "plain",
        model_id: format!("{:#x}", model.model_id()),
        epsilon: model.epsilon(),
        n_points: model.tree().n_points(),
        ambient_dim: dim,
        max_scale: model.max_scale(),
        node_count: model.tree().node_count(),
        tree_seed: model.tree().rng_seed(),
        policy: model.policy(),
        variants: Some(model.variants()),
        stop_criterion: None,
        binary_layout: LAYOUT_NOTE,
    };
    std::fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

/// Saves an orthogonal model to `path` and its sidecar to `path.json`.
pub fn save_ortho_model(model: &OrthoGmraModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = Writer {
        inner: BufWriter::new(std::fs::File::create(path)?),
    };
    w.bytes(&MODEL_MAGIC)?;
    w.u32(1)?;
    let flags = match model.criterion() {
        PrecisionMode::Absolute => 0u8,
        PrecisionMode::Relative => 1u8,
    };
    w.bytes(&[1u8, flags])?;
    w.bytes(&[0u8, 0u8])?;
    w.u64(model.model_id())?;
    w.f64(model.epsilon())?;
    let tree_json = model.tree().to_json_string()?;
    w.u64(tree_json.len() as u64)?;
    w.bytes(tree_json.as_bytes())?;
    let policy_json = serde_json::to_string(model.policy())?;
    w.u64(policy_json.len() as u64)?;
    w.bytes(policy_json.as_bytes())?;

    let nodes: Vec<&OrthoNode> = model.nodes().collect();
    w.u64(nodes.len() as u64)?;
    let dim = model.ambient_dim();
    for node in nodes {
        w.u64(node.key.scale as u64)?;
        w.u64(node.key.index as u64)?;
        w.u64(dim as u64)?;
        w.vector(&node.center)?;
        w.u64(0)?; // no scaling basis stored
        w.u64(0)?; // no spectrum stored
        w.u64(node.u_basis.dim() as u64)?;
        w.matrix(node.u_basis.matrix())?;
        w.vector(&node.translation)?;
        w.u64(node.cum_dim as u64)?;
    }
    drop(w);

    let sidecar = Sidecar {
        version: 1,
        kind: "orthogonal",
        model_id: format!("{:#x}", model.model_id()),
        epsilon: model.epsilon(),
        n_points: model.tree().n_points(),
        ambient_dim: dim,
        max_scale: model.max_scale(),
        node_count: model.tree().node_count(),
        tree_seed: model.tree().rng_seed(),
        policy: model.policy(),
        variants: None,
        stop_criterion: Some(model.criterion()),
        binary_layout: LAYOUT_NOTE,
    };
    std::fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// Which kind of model a file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Plain,
    Orthogonal,
}

/// Reads only the kind byte of a model file.
pub fn read_model_kind(path: impl AsRef<Path>) -> Result<ModelKind> {
    let mut r = Reader {
        inner: BufReader::new(std::fs::File::open(path)?),
    };
    let header = read_header(&mut r)?;
    Ok(header.kind)
}

struct Header {
    kind: ModelKind,
    flags: u8,
    model_id: u64,
    epsilon: f64,
    tree: PartitionTree,
    policy: DimensionPolicy,
    node_count: usize,
}

fn read_header<R: Read>(r: &mut Reader<R>) -> Result<Header> {
    let magic = r.bytes(8)?;
    if magic != MODEL_MAGIC {
        return Err(Error::ModelFormat("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != 1 {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let kind_flags = r.bytes(2)?;
    let kind = match kind_flags[0] {
        0 => ModelKind::Plain,
        1 => ModelKind::Orthogonal,
        other => return Err(Error::ModelFormat(format!("unknown kind {other}"))),
    };
    let flags = kind_flags[1];
    r.bytes(2)?; // reserved
    let model_id = r.u64()?;
    let epsilon = r.f64()?;
    let tree_len = r.u64()? as usize;
    let tree_json = String::from_utf8(r.bytes(tree_len)?)
        .map_err(|e| Error::ModelFormat(format!("tree json not utf-8: {e}")))?;
    let tree = PartitionTree::from_json_str(&tree_json)?;
    let policy_len = r.u64()? as usize;
    let policy_json = String::from_utf8(r.bytes(policy_len)?)
        .map_err(|e| Error::ModelFormat(format!("policy json not utf-8: {e}")))?;
    let policy: DimensionPolicy = serde_json::from_str(&policy_json)?;
    let node_count = r.u64()? as usize;
    Ok(Header {
        kind,
        flags,
        model_id,
        epsilon,
        tree,
        policy,
        node_count,
    })
}

/// Loads a plain model saved by [`save_gmra_model`].
pub fn load_gmra_model(path: impl AsRef<Path>) -> Result<GmraModel> {
    let mut r = Reader {
        inner: BufReader::new(std::fs::File::open(path)?),
    };
    let header = read_header(&mut r)?;
    if header.kind != ModelKind::Plain {
        return Err(Error::ModelFormat("file holds an orthogonal model".into()));
    }
    let variants = GmraVariants {
        tangential_corrections: header.flags & 1 != 0,
        split_shared_wavelets: header.flags & 2 != 0,
    };
    let mut nodes = BTreeMap::new();
    for _ in 0..header.node_count {
        let scale = r.u64()? as usize;
        let index = r.u64()? as usize;
        let key = NodeKey { scale, index };
        let dim = r.u64()? as usize;
        let center = r.vector(dim)?;
        let d = r.u64()? as usize;
        let basis = SubspaceBasis::new(r.matrix(dim, d)?)?;
        let spec_len = r.u64()? as usize;
        let mut values = Vec::with_capacity(spec_len);
        for _ in 0..spec_len {
            values.push(r.f64()?);
        }
        let spectrum = Spectrum::new(values);
        let d_w = r.u64()? as usize;
        let wavelet = SubspaceBasis::new(r.matrix(dim, d_w)?)?;
        let translation = r.vector(dim)?;
        r.u64()?; // cumulative dim, unused here
        let psi_t_phi = wavelet.matrix().tr_mul(basis.matrix());
        // Parent products rebuilt after all nodes are read.
        nodes.insert(
            key,
            GmraNode {
                key,
                center,
                basis,
                spectrum,
                wavelet,
                translation,
                psi_t_phi,
                parent_phi_product: None,
                parent_center_offset: None,
            },
        );
    }
    // Rebuild parent-child products.
    let keys: Vec<NodeKey> = nodes.keys().copied().collect();
    for key in keys {
        let parent = header.tree.node(key)?.parent;
        if let Some(parent_key) = parent {
            let (phi_product, center_offset) = {
                let parent_node = &nodes[&parent_key];
                let node = &nodes[&key];
                (
                    parent_node.basis.matrix().tr_mul(node.basis.matrix()),
                    parent_node
                        .basis
                        .coefficients(&(&node.center - &parent_node.center)),
                )
            };
            let node = nodes.get_mut(&key).expect("node read");
            node.parent_phi_product = Some(phi_product);
            node.parent_center_offset = Some(center_offset);
        }
    }
    assemble_model(
        header.tree,
        nodes,
        header.policy,
        variants,
        header.epsilon,
        header.model_id,
    )
}

/// Loads an orthogonal model saved by [`save_ortho_model`].
pub fn load_ortho_model(path: impl AsRef<Path>) -> Result<OrthoGmraModel> {
    let mut r = Reader {
        inner: BufReader::new(std::fs::File::open(path)?),
    };
    let header = read_header(&mut r)?;
    if header.kind != ModelKind::Orthogonal {
        return Err(Error::ModelFormat("file holds a plain model".into()));
    }
    let criterion = if header.flags & 1 != 0 {
        PrecisionMode::Relative
    } else {
        PrecisionMode::Absolute
    };
    let mut nodes = BTreeMap::new();
    for _ in 0..header.node_count {
        let scale = r.u64()? as usize;
        let index = r.u64()? as usize;
        let key = NodeKey { scale, index };
        let dim = r.u64()? as usize;
        let center = r.vector(dim)?;
        let d = r.u64()? as usize;
        let _ = r.matrix(dim, d)?;
        let spec_len = r.u64()? as usize;
        for _ in 0..spec_len {
            r.f64()?;
        }
        let d_u = r.u64()? as usize;
        let u_basis = SubspaceBasis::new(r.matrix(dim, d_u)?)?;
        let translation = r.vector(dim)?;
        let cum_dim = r.u64()? as usize;
        nodes.insert(
            key,
            OrthoNode {
                key,
                center,
                u_basis,
                translation,
                cum_dim,
            },
        );
    }
    Ok(assemble_ortho(
        header.tree,
        nodes,
        header.policy,
        header.epsilon,
        criterion,
        header.model_id,
    ))
}

/// Writes coefficient rows `point_id,scale,index,block_index,value`.
pub fn write_coefficients_csv(
    path: impl AsRef<Path>,
    coeffs: &[GwtCoefficients],
) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "point_id,scale,index,block_index,value")?;
    for (point_id, c) in coeffs.iter().enumerate() {
        for (scale, block) in c.scale_blocks() {
            let key = c.path()[scale];
            for (l, &v) in block.iter().enumerate() {
                writeln!(w, "{point_id},{},{},{l},{v}", key.scale, key.index)?;
            }
        }
    }
    Ok(())
}

/// Compact binary coefficient dump.
pub fn write_coefficients_binary(
    path: impl AsRef<Path>,
    coeffs: &[GwtCoefficients],
) -> Result<()> {
    let mut w = Writer {
        inner: BufWriter::new(std::fs::File::create(path)?),
    };
    w.bytes(&COEFF_MAGIC)?;
    let model_id = coeffs.first().map(GwtCoefficients::model_id).unwrap_or(0);
    w.u64(model_id)?;
    w.u64(coeffs.len() as u64)?;
    for c in coeffs {
        let ambient = c.ambient_dim() as u64;
        w.u64(ambient)?;
        w.u64(c.path().len() as u64)?;
        for key in c.path() {
            w.u64(key.scale as u64)?;
            w.u64(key.index as u64)?;
        }
        for block in c.blocks() {
            w.u64(block.len() as u64)?;
            w.vector(block)?;
        }
        w.f64(c.projection_residual())?;
    }
    Ok(())
}

/// Reads a compact binary coefficient dump.
pub fn read_coefficients_binary(path: impl AsRef<Path>) -> Result<Vec<GwtCoefficients>> {
    let mut r = Reader {
        inner: BufReader::new(std::fs::File::open(path)?),
    };
    let magic = r.bytes(8)?;
    if magic != COEFF_MAGIC {
        return Err(Error::ModelFormat("bad coefficient magic".into()));
    }
    let model_id = r.u64()?;
    let count = r.u64()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let ambient = r.u64()? as usize;
        let path_len = r.u64()? as usize;
        let mut path = Vec::with_capacity(path_len);
        for _ in 0..path_len {
            let scale = r.u64()? as usize;
            let index = r.u64()? as usize;
            path.push(NodeKey { scale, index });
        }
        let mut blocks = Vec::with_capacity(path_len);
        for _ in 0..path_len {
            let len = r.u64()? as usize;
            blocks.push(r.vector(len)?);
        }
        let residual = r.f64()?;
        out.push(GwtCoefficients::from_parts(
            model_id, ambient, path, blocks, residual,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use crate::ortho::{construct_ortho, ortho_fgwt_training, ortho_igwt};
    use crate::synth::{generate, GeneratorKind, GeneratorSpec};
    use crate::transforms::{fgwt_batch, igwt};
    use crate::tree::{build_tree, SplitMethod, StoppingRule};
    use crate::wavelets::construct_gmra;

    fn fixture() -> (PointCloud, PartitionTree) {
        let cloud = generate(&GeneratorSpec {
            kind: GeneratorKind::SManifold,
            n: 600,
            ambient_dim: 12,
            noise_sigma: 0.0,
            seed: 17,
        })
        .unwrap();
        let tree = build_tree(
            &cloud,
            SplitMethod::IteratedPca,
            &StoppingRule::for_dimension(2),
            17,
        )
        .unwrap();
        (cloud, tree)
    }

    #[test]
    fn gmra_model_round_trip() {
        let (cloud, tree) = fixture();
        let model = construct_gmra(
            &cloud,
            &tree,
            &DimensionPolicy::fixed(2),
            1e-4,
            GmraVariants::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gwm");
        save_gmra_model(&model, &path).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(read_model_kind(&path).unwrap(), ModelKind::Plain);

        let loaded = load_gmra_model(&path).unwrap();
        assert_eq!(loaded.model_id(), model.model_id());
        // Behavioral equality: transforms agree bit-for-bit on projectors
        // and round trips.
        let coeffs = fgwt_batch(&model, &cloud).unwrap();
        let coeffs2 = fgwt_batch(&loaded, &cloud).unwrap();
        for (a, b) in coeffs.iter().zip(&coeffs2).step_by(50) {
            for (ba, bb) in a.blocks().iter().zip(b.blocks()) {
                assert!((ba - bb).norm() < 1e-12);
            }
            let ra = igwt(&model, a).unwrap();
            let rb = igwt(&loaded, b).unwrap();
            assert!((ra - rb).norm() < 1e-12);
        }
        // Saving again is byte-identical.
        let path2 = dir.path().join("model2.gwm");
        save_gmra_model(&loaded, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn ortho_model_round_trip() {
        let (cloud, tree) = fixture();
        let model = construct_ortho(
            &cloud,
            &tree,
            &DimensionPolicy::fixed(2),
            1e-4,
            PrecisionMode::Absolute,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ortho.gwm");
        save_ortho_model(&model, &path).unwrap();
        assert_eq!(read_model_kind(&path).unwrap(), ModelKind::Orthogonal);
        let loaded = load_ortho_model(&path).unwrap();
        for i in (0..cloud.n()).step_by(97) {
            let a = ortho_fgwt_training(&model, &cloud, i).unwrap();
            let b = ortho_fgwt_training(&loaded, &cloud, i).unwrap();
            let ra = ortho_igwt(&model, &a).unwrap();
            let rb = ortho_igwt(&loaded, &b).unwrap();
            assert!((ra - rb).norm() < 1e-12);
        }
    }

    #[test]
    fn coefficient_dumps_round_trip() {
        let (cloud, tree) = fixture();
        let model = construct_gmra(
            &cloud,
            &tree,
            &DimensionPolicy::fixed(2),
            1e-4,
            GmraVariants::default(),
        )
        .unwrap();
        let coeffs = fgwt_batch(&model, &cloud).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let bin = dir.path().join("coeffs.gwc");
        write_coefficients_binary(&bin, &coeffs).unwrap();
        let back = read_coefficients_binary(&bin).unwrap();
        assert_eq!(coeffs.len(), back.len());
        for (a, b) in coeffs.iter().zip(&back) {
            assert_eq!(a, b);
        }

        let csv = dir.path().join("coeffs.csv");
        write_coefficients_csv(&csv, &coeffs).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        let rows = text.lines().count() - 1;
        let slots: usize = coeffs.iter().map(|c| c.total_len()).sum();
        assert_eq!(rows, slots);
    }
}
