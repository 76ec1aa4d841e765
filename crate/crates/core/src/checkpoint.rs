//! Binary checkpoint format for a [`Predictor`].
//!
//! All integers are little-endian `u64` unless noted; floats are raw
//! little-endian `f64` bits, so a round trip is exact.
//!
//! ```text
//! magic      b"SGS2SCKP"
//! version    u32
//! variant    u8      0 seq2seq, 1 multilabel
//! config     source_vocab herb_vocab embed hidden
//!            seq2seq:    max_decode_len, coverage u8, soft_loss u8
//!            multilabel: top_k, threshold f64
//! tokenize   u8      0 chars, 1 whitespace
//! vocabs     source then herbs: count, then (len, utf-8 bytes) per token,
//!            reserved tokens excluded
//! tensors    count, then per tensor: name, ndim, dims, values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::corpus::{Tokenization, Vocab};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Seq2Seq};
use crate::multilabel::{MultiLabel, MultiLabelConfig};
use crate::params::{load_into, snapshot, NamedTensors, Parameters};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{Model, Predictor};

const MAGIC: &[u8; 8] = b"SGS2SCKP";
const VERSION: u32 = 1;
/// Guards allocations against corrupt length fields.
const MAX_LEN: u64 = 1 << 32;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn usize(&mut self, v: usize) -> Result<()> {
        self.u64(v as u64)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.usize(s.len())?;
        Ok(self.0.write_all(s.as_bytes())?)
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > MAX_LEN {
            return Err(Error::Format(format!("implausible length {v}")));
        }
        Ok(v as usize)
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Format(format!("bad flag byte {b}"))),
        }
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        let mut buf = vec![0u8; n];
        self.0.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        String::from_utf8(buf).map_err(|_| Error::Format("token is not UTF-8".into()))
    }
}

pub fn write_predictor(p: &Predictor, w: impl Write) -> Result<()> {
    let mut w = Writer(w);
    w.0.write_all(MAGIC)?;
    w.0.write_all(&VERSION.to_le_bytes())?;
    let params: Vec<(String, &Tensor)> = match &p.model {
        Model::Seq2Seq(m) => {
            let c = &m.config;
            w.u8(0)?;
            for v in [c.source_vocab_size, c.herb_vocab_size, c.embed_dim, c.hidden_dim, c.max_decode_len] {
                w.usize(v)?;
            }
            w.u8(c.coverage_enabled as u8)?;
            w.u8(c.soft_loss_enabled as u8)?;
            m.named_params()
        }
        Model::MultiLabel(m) => {
            let c = &m.config;
            w.u8(1)?;
            for v in [c.source_vocab_size, c.herb_vocab_size, c.embed_dim, c.hidden_dim, c.top_k] {
                w.usize(v)?;
            }
            w.f64(c.threshold)?;
            m.named_params()
        }
    };
    w.u8(match p.tokenization {
        Tokenization::Chars => 0,
        Tokenization::Whitespace => 1,
    })?;
    for vocab in [&p.source_vocab, &p.herb_vocab] {
        w.usize(vocab.content_len())?;
        for t in vocab.content() {
            w.str(t)?;
        }
    }
    w.usize(params.len())?;
    for (name, t) in params {
        w.str(&name)?;
        w.usize(t.shape().len())?;
        for &d in t.shape() {
            w.usize(d)?;
        }
        for &v in t.values() {
            w.f64(v)?;
        }
    }
    Ok(w.0.flush()?)
}

pub fn read_predictor(r: impl Read) -> Result<Predictor> {
    let mut r = Reader(r);
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.bytes()?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let variant = r.u8()?;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.len()?;
    }
    let [source_vocab_size, herb_vocab_size, embed_dim, hidden_dim, extra] = dims;
    // parameter values are overwritten below, so the seed is irrelevant
    let mut rng = Rng::new(0);
    let mut model = match variant {
        0 => {
            let coverage_enabled = r.flag()?;
            let soft_loss_enabled = r.flag()?;
            let config = ModelConfig {
                source_vocab_size,
                herb_vocab_size,
                embed_dim,
                hidden_dim,
                max_decode_len: extra,
                coverage_enabled,
                soft_loss_enabled,
            };
            Model::Seq2Seq(Seq2Seq::new(config, &mut rng).map_err(as_format)?)
        }
        1 => {
            let threshold = r.f64()?;
            let config = MultiLabelConfig {
                source_vocab_size,
                herb_vocab_size,
                embed_dim,
                hidden_dim,
                top_k: extra,
                threshold,
            };
            Model::MultiLabel(MultiLabel::new(config, &mut rng).map_err(as_format)?)
        }
        b => return Err(Error::Format(format!("unknown model variant tag {b}"))),
    };
    let tokenization = match r.u8()? {
        0 => Tokenization::Chars,
        1 => Tokenization::Whitespace,
        b => return Err(Error::Format(format!("unknown tokenization tag {b}"))),
    };
    let mut vocabs = Vec::with_capacity(2);
    for _ in 0..2 {
        let n = r.len()?;
        let tokens = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        vocabs.push(Vocab::from_tokens(tokens)?);
    }
    let herb_vocab = vocabs.pop().unwrap();
    let source_vocab = vocabs.pop().unwrap();

    let count = r.len()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str()?;
        let ndim = r.len()?;
        let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push((name.clone(), Tensor::new(shape, values).map_err(|e| as_format(e).context(name))?));
    }
    let mut trailing = [0u8; 1];
    if r.0.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let named = NamedTensors(tensors);
    match &mut model {
        Model::Seq2Seq(m) => load_into(m, &named)?,
        Model::MultiLabel(m) => load_into(m, &named)?,
    }
    Predictor::new(model, source_vocab, herb_vocab, tokenization)
}

fn as_format(e: Error) -> Error {
    Error::Format(e.to_string())
}

pub fn save(p: &Predictor, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let file = std::fs::File::create(&tmp)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", tmp.display())))?;
    write_predictor(p, std::io::BufWriter::new(file))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Predictor> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    read_predictor(std::io::BufReader::new(file)).map_err(|e| e.context(path.display().to_string()))
}

/// Every parameter of `p` under its checkpoint name.
pub fn parameters(p: &Predictor) -> NamedTensors {
    match &p.model {
        Model::Seq2Seq(m) => snapshot(m),
        Model::MultiLabel(m) => snapshot(m),
    }
}
