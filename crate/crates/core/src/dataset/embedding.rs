use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::text::Vocabulary;

const INIT_RANGE: f64 = 0.2;

/// One row per vocabulary index; row 0 (padding) is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    table: Tensor,
}

impl EmbeddingMatrix {
    pub fn from_tensor(table: Tensor) -> Result<Self> {
        if table.dims2().is_none() || !table.is_finite() {
            return Err(Error::data("embedding table must be a finite matrix"));
        }
        let mut m = EmbeddingMatrix { table };
        m.zero_padding();
        Ok(m)
    }

    fn zero_padding(&mut self) {
        let dim = self.dim();
        self.table.data_mut()[..dim].iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn rows(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.table.row_slice(i)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.table
    }

    pub fn into_tensor(self) -> Tensor {
        self.table
    }
}

fn random_table(rows: usize, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if rows < 1 || dim < 1 {
        return Err(Error::config("embedding table needs >= 1 row and dimension >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..rows * dim)
        .map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE))
        .collect())
}

/// Uniform [−0.2, 0.2) initialization for every row; row 0 zeroed.
pub fn random_embeddings(rows: usize, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    let data = random_table(rows, dim, seed)?;
    EmbeddingMatrix::from_tensor(Tensor::new(vec![rows, dim], data)?)
}

/// Reads whitespace-separated `token v1 … v_dim` lines (optionally after a
/// `count dim` header). Vocabulary terms missing from the file keep their
/// seeded random initialization.
pub fn read_embeddings<R: Read>(
    reader: R,
    origin: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    let rows = vocab.size();
    let mut data = random_table(rows, dim, seed)?;
    let ingest = |line: usize, message: String| Error::Ingest {
        path: origin.to_path_buf(),
        line,
        message,
    };
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0
            && fields.len() == 2
            && fields[0].parse::<usize>().is_ok()
            && fields[1].parse::<usize>() == Ok(dim)
        {
            continue;
        }
        let token = fields[0];
        if fields.len() - 1 != dim {
            return Err(ingest(
                i + 1,
                format!("vector for `{token}` has {} values, expected {dim}", fields.len() - 1),
            ));
        }
        let values = fields[1..]
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| ingest(i + 1, format!("non-numeric value `{v}` for `{token}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(row) = vocab.get(token) {
            data[row * dim..(row + 1) * dim].copy_from_slice(&values);
        }
    }
    EmbeddingMatrix::from_tensor(Tensor::new(vec![rows, dim], data)?)
}

pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    read_embeddings(super::io::open(path)?, path, vocab, dim, seed)
}
