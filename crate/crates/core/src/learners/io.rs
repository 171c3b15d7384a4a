//! `GEOM` versioned binary model format.
//!
//! Little-endian throughout:
//!
//! | field        | encoding                                         |
//! |--------------|--------------------------------------------------|
//! | magic        | `GEOM`                                           |
//! | version      | u16 (1)                                          |
//! | kind         | u8: 1 forest, 2 boosting, 3 least squares, 4 mean |
//! | names        | u32 count, then u32 length + UTF-8 bytes each    |
//! | payload      | kind-specific, see `encode`                       |
//!
//! Optional integers are u64 with `u64::MAX` meaning absent. Floats are raw
//! IEEE-754 bits so round trips are exact.

use super::{Forest, ForestParams, GbModel, GbParams, MeanModel, Model, Node, OlsModel, Tree};

const MAGIC: &[u8; 4] = b"GEOM";
const VERSION: u16 = 1;
const NONE: u64 = u64::MAX;

struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn opt(&mut self, v: Option<usize>) {
        self.u64(v.map_or(NONE, |v| v as u64));
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tree(&mut self, t: &Tree) {
        self.usize(t.nodes.len());
        for n in &t.nodes {
            match *n {
                Node::Leaf { value, count } => {
                    self.u8(0);
                    self.f64(value);
                    self.f64(count);
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    gain,
                    count,
                } => {
                    self.u8(1);
                    self.usize(feature);
                    self.f64(threshold);
                    self.usize(left);
                    self.usize(right);
                    self.f64(gain);
                    self.f64(count);
                }
            }
        }
    }
}

pub(super) fn encode(model: &Model) -> Vec<u8> {
    let mut o = Out(MAGIC.to_vec());
    o.0.extend_from_slice(&VERSION.to_le_bytes());
    let (kind, names) = match model {
        Model::Forest(m) => (1, &m.names),
        Model::Gb(m) => (2, &m.names),
        Model::Ols(m) => (3, &m.names),
        Model::Mean(m) => (4, &m.names),
    };
    o.u8(kind);
    o.u32(names.len() as u32);
    for n in names {
        o.str(n);
    }
    match model {
        Model::Forest(m) => {
            let p = &m.params;
            o.usize(p.n_trees);
            o.opt(p.mtry);
            o.usize(p.min_leaf);
            o.opt(p.max_depth);
            o.u64(p.seed);
            o.u8(p.bootstrap as u8);
            o.usize(m.n_train);
            o.usize(m.trees.len());
            for t in &m.trees {
                o.tree(t);
            }
            for counts in &m.inbag {
                for &c in counts {
                    o.u32(c);
                }
            }
        }
        Model::Gb(m) => {
            let p = &m.params;
            o.usize(p.n_rounds);
            o.f64(p.learning_rate);
            o.usize(p.max_depth);
            o.usize(p.min_leaf);
            o.f64(m.init);
            o.usize(m.trees.len());
            for t in &m.trees {
                o.tree(t);
            }
        }
        Model::Ols(m) => {
            o.f64(m.intercept);
            o.usize(m.coefficients.len());
            for &c in &m.coefficients {
                o.f64(c);
            }
        }
        Model::Mean(m) => o.f64(m.value),
    }
    o.0
}

struct In<'a> {
    bytes: &'a [u8],
    at: usize,
}

type Res<T> = Result<T, String>;

impl In<'_> {
    fn take(&mut self, n: usize) -> Res<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated model")?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Res<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Res<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Res<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Res<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Res<usize> {
        usize::try_from(self.u64()?).map_err(|_| "length overflow".to_string())
    }
    /// A count whose elements each need at least `min_size` bytes.
    fn count(&mut self, min_size: usize) -> Res<usize> {
        let n = self.usize()?;
        if n.saturating_mul(min_size) > self.bytes.len() - self.at {
            return Err("truncated model".into());
        }
        Ok(n)
    }
    fn opt(&mut self) -> Res<Option<usize>> {
        let v = self.u64()?;
        Ok((v != NONE).then_some(v as usize))
    }
    fn f64(&mut self) -> Res<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Res<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8 name".to_string())
    }
    fn tree(&mut self, n_features: usize) -> Res<Tree> {
        let n = self.count(17)?;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            nodes.push(match self.u8()? {
                0 => Node::Leaf {
                    value: self.f64()?,
                    count: self.f64()?,
                },
                1 => {
                    let node = Node::Split {
                        feature: self.usize()?,
                        threshold: self.f64()?,
                        left: self.usize()?,
                        right: self.usize()?,
                        gain: self.f64()?,
                        count: self.f64()?,
                    };
                    if let Node::Split { feature, left, right, .. } = node {
                        if feature >= n_features || left >= n || right >= n {
                            return Err("split refers outside the model".into());
                        }
                    }
                    node
                }
                t => return Err(format!("unknown node tag {t}")),
            });
        }
        if nodes.is_empty() {
            return Err("empty tree".into());
        }
        Ok(Tree { nodes })
    }
}

pub(super) fn decode(bytes: &[u8]) -> Res<Model> {
    let mut r = In { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let kind = r.u8()?;
    let n_names = r.u32()? as usize;
    let names = (0..n_names).map(|_| r.str()).collect::<Res<Vec<_>>>()?;
    let p = names.len();
    let model = match kind {
        1 => {
            let params = ForestParams {
                n_trees: r.usize()?,
                mtry: r.opt()?,
                min_leaf: r.usize()?,
                max_depth: r.opt()?,
                seed: r.u64()?,
                bootstrap: r.u8()? != 0,
            };
            let n_train = r.usize()?;
            let n_trees = r.count(8)?;
            let trees = (0..n_trees).map(|_| r.tree(p)).collect::<Res<Vec<_>>>()?;
            let mut inbag = Vec::with_capacity(n_trees);
            for _ in 0..n_trees {
                r.take(0)?;
                let row: Res<Vec<u32>> = (0..n_train).map(|_| r.u32()).collect();
                inbag.push(row?);
            }
            Model::Forest(Forest {
                names,
                params,
                n_train,
                trees,
                inbag,
            })
        }
        2 => {
            let params = GbParams {
                n_rounds: r.usize()?,
                learning_rate: r.f64()?,
                max_depth: r.usize()?,
                min_leaf: r.usize()?,
            };
            let init = r.f64()?;
            let n = r.count(8)?;
            let trees = (0..n).map(|_| r.tree(p)).collect::<Res<Vec<_>>>()?;
            Model::Gb(GbModel {
                names,
                params,
                init,
                trees,
            })
        }
        3 => {
            let intercept = r.f64()?;
            let n = r.count(8)?;
            if n != p {
                return Err("coefficient count differs from feature count".into());
            }
            let coefficients = (0..n).map(|_| r.f64()).collect::<Res<Vec<_>>>()?;
            Model::Ols(OlsModel {
                names,
                intercept,
                coefficients,
            })
        }
        4 => Model::Mean(MeanModel {
            names,
            value: r.f64()?,
        }),
        k => return Err(format!("unknown model kind {k}")),
    };
    if r.at != bytes.len() {
        return Err("trailing bytes after model".into());
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::testutil::design;
    use crate::learners::{fit_forest, fit_gb, fit_ols, Regressor};

    fn data() -> (crate::learners::Design, Vec<f64>) {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin()).collect();
        let z: Vec<f64> = (0..40).map(|i| i as f64 / 3.0).collect();
        let y = x.iter().zip(&z).map(|(a, b)| a * 2.0 + b * 0.1 + 1.0 / 3.0).collect();
        (design(vec![x, z]), y)
    }

    fn models() -> Vec<Model> {
        let (d, y) = data();
        vec![
            Model::Forest(fit_forest(&d, &y, &ForestParams { n_trees: 7, min_leaf: 2, ..Default::default() }).unwrap()),
            Model::Gb(fit_gb(&d, &y, &GbParams { n_rounds: 9, ..Default::default() }).unwrap()),
            Model::Ols(fit_ols(&d, &y).unwrap()),
            Model::Mean(MeanModel { names: d.names().to_vec(), value: 0.1 }),
        ]
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let (d, _) = data();
        for m in models() {
            let bytes = encode(&m);
            assert_eq!(&bytes[..4], b"GEOM");
            let back = decode(&bytes).unwrap();
            assert_eq!(back, m);
            let (a, b) = (m.predict(&d).unwrap(), back.predict(&d).unwrap());
            assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        for m in models() {
            let text = m.to_json();
            assert!(text.contains(&format!("\"kind\": \"{}\"", match m {
                Model::Forest(_) => "forest",
                Model::Gb(_) => "gb",
                Model::Ols(_) => "ols",
                Model::Mean(_) => "mean",
            })));
            assert_eq!(Model::from_json(&text).unwrap(), m);
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = encode(&models()[1]);
        assert!(decode(&bytes[..bytes.len() - 3]).unwrap_err().contains("truncated"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad).unwrap_err(), "bad magic");
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).unwrap_err().contains("trailing"));
    }
}
