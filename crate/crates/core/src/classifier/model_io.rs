//! `SONM` model container.
//!
//! ```text
//! "SONM" | version u32 | kind u8 (1 svm, 2 rf, 3 mlp) | payload
//! svm: dim u32 | lambda f64 | b f64 | w[dim] f64
//! rf:  dim u32 | seed u64 | n_trees u32 | per tree: n_nodes u32 | nodes in preorder
//!      node: 0 u8 | count0 u32 | count1 u32           (leaf)
//!            1 u8 | feature u32 | threshold f64       (split, left subtree follows)
//! mlp: n_layers u32 | per layer: inp u32 | out u32 | w[out*inp] f64 | b[out] f64
//! ```
//! All integers and floats little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{ClassifierError, DecisionTree, DenseLayer, LinearSvmModel, MlpModel, Model, RandomForestModel, TreeNode};

pub const MODEL_MAGIC: &[u8; 4] = b"SONM";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> ClassifierError {
    ClassifierError::Format(msg.into())
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.0.write_all(&[v])
    }
    fn u32(&mut self, v: usize) -> std::io::Result<()> {
        let v = u32::try_from(v).map_err(|_| std::io::Error::other("value exceeds u32"))?;
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64s(&mut self, v: &[f64]) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(v.len() * 8);
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        self.0.write_all(&buf)
    }
}

pub fn write_model<W: Write>(model: &Model, w: W) -> Result<(), ClassifierError> {
    let mut w = Writer(w);
    w.0.write_all(MODEL_MAGIC)?;
    w.u32(VERSION as usize)?;
    match model {
        Model::Svm(m) => {
            w.u8(1)?;
            w.u32(m.w.len())?;
            w.f64(m.lambda)?;
            w.f64(m.b)?;
            w.f64s(&m.w)?;
        }
        Model::Forest(m) => {
            w.u8(2)?;
            w.u32(m.dim)?;
            w.u64(m.seed)?;
            w.u32(m.trees.len())?;
            for t in &m.trees {
                w.u32(t.nodes.len())?;
                for n in &t.nodes {
                    match n {
                        TreeNode::Leaf { counts } => {
                            w.u8(0)?;
                            w.u32(counts[0] as usize)?;
                            w.u32(counts[1] as usize)?;
                        }
                        TreeNode::Split {
                            feature, threshold, ..
                        } => {
                            w.u8(1)?;
                            w.u32(*feature)?;
                            w.f64(*threshold)?;
                        }
                    }
                }
            }
        }
        Model::Mlp(m) => {
            w.u8(3)?;
            w.u32(m.layers.len())?;
            for l in &m.layers {
                w.u32(l.inp)?;
                w.u32(l.out)?;
                w.f64s(&l.w)?;
                w.f64s(&l.b)?;
            }
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClassifierError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ClassifierError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, ClassifierError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64, ClassifierError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, ClassifierError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ClassifierError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| bad("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn read_tree(r: &mut Reader<'_>, dim: usize) -> Result<DecisionTree, ClassifierError> {
    let n = r.u32()?;
    let mut raw = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        raw.push(match r.u8()? {
            0 => TreeNode::Leaf {
                counts: [r.u32()? as u32, r.u32()? as u32],
            },
            1 => {
                let feature = r.u32()?;
                if feature >= dim {
                    return Err(bad(format!("split feature {feature} >= dim {dim}")));
                }
                TreeNode::Split {
                    feature,
                    threshold: r.f64()?,
                    right: 0,
                }
            }
            t => return Err(bad(format!("unknown node tag {t}"))),
        });
    }
    // resolve right-child indices from the preorder layout
    fn link(nodes: &mut [TreeNode], i: usize) -> Result<usize, ClassifierError> {
        match nodes.get(i) {
            None => Err(bad("tree ends inside a split")),
            Some(TreeNode::Leaf { .. }) => Ok(i + 1),
            Some(TreeNode::Split { .. }) => {
                let right_at = link(nodes, i + 1)?;
                if let TreeNode::Split { right, .. } = &mut nodes[i] {
                    *right = right_at;
                }
                link(nodes, right_at)
            }
        }
    }
    let end = link(&mut raw, 0)?;
    if end != raw.len() {
        return Err(bad("trailing nodes after tree"));
    }
    Ok(DecisionTree { nodes: raw })
}

pub fn read_model<R: Read>(mut r: R) -> Result<Model, ClassifierError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4).map_err(|_| bad("missing magic"))? != MODEL_MAGIC {
        return Err(bad("bad magic, expected SONM"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let model = match r.u8()? {
        1 => {
            let dim = r.u32()?;
            let lambda = r.f64()?;
            let b = r.f64()?;
            Model::Svm(LinearSvmModel {
                w: r.f64s(dim)?,
                b,
                lambda,
            })
        }
        2 => {
            let dim = r.u32()?;
            let seed = r.u64()?;
            let n = r.u32()?;
            let trees = (0..n).map(|_| read_tree(&mut r, dim)).collect::<Result<_, _>>()?;
            Model::Forest(RandomForestModel { trees, dim, seed })
        }
        3 => {
            let n = r.u32()?;
            let mut layers: Vec<DenseLayer> = Vec::with_capacity(n.min(64));
            for _ in 0..n {
                let inp = r.u32()?;
                let out = r.u32()?;
                if let Some(prev) = layers.last() {
                    if prev.out != inp {
                        return Err(bad("layer shapes do not chain"));
                    }
                }
                let w = r.f64s(inp.checked_mul(out).ok_or_else(|| bad("layer too large"))?)?;
                let b = r.f64s(out)?;
                layers.push(DenseLayer { inp, out, w, b });
            }
            if layers.last().is_none_or(|l| l.out != 1) {
                return Err(bad("network must end in a single output"));
            }
            Model::Mlp(MlpModel { layers })
        }
        k => return Err(bad(format!("unknown model kind {k}"))),
    };
    if r.pos != buf.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
    let mut bytes = Vec::new();
    write_model(model, &mut bytes)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, ClassifierError> {
    read_model(std::fs::File::open(path)?)
}
