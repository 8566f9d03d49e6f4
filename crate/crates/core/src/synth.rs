//! Synthetic planted-topic data: topic directions in R^d, documents and
//! queries emitting unit-norm tokens around their topic, relevance defined
//! by topic match. Deterministic per seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::{DenseTokenBag, DenseVector};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub d: usize,
    pub topics: usize,
    pub docs: u64,
    pub queries: u64,
    pub doc_tokens: (usize, usize),
    pub query_tokens: (usize, usize),
    /// Gaussian noise scale added to the topic direction per token.
    pub noise: f64,
    /// Scale of a fixed direction added to every token, emulating the
    /// anisotropic common component of real embedding spaces.
    pub mean_scale: f64,
    /// Axis-aligned topic directions (requires topics <= d); otherwise
    /// random unit directions.
    pub orthogonal_topics: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            d: 32,
            topics: 8,
            docs: 1000,
            queries: 100,
            doc_tokens: (4, 12),
            query_tokens: (2, 6),
            noise: 0.25,
            mean_scale: 0.0,
            orthogonal_topics: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub docs: Vec<(u64, DenseTokenBag)>,
    pub queries: Vec<(u64, DenseTokenBag)>,
    /// (query_id, doc_id) for every same-topic pair.
    pub labels: Vec<(u64, u64)>,
    pub doc_topics: Vec<usize>,
    pub query_topics: Vec<usize>,
}

pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    if config.d == 0 || config.topics == 0 {
        return Err(Error::invalid_config("d and topics must be >= 1"));
    }
    if config.orthogonal_topics && config.topics > config.d {
        return Err(Error::invalid_config(
            "orthogonal topics require topics <= d",
        ));
    }
    let check_range = |(lo, hi): (usize, usize), what: &str| {
        if lo == 0 || hi < lo {
            return Err(Error::invalid_config(format!(
                "{what} token range ({lo}, {hi}) must satisfy 1 <= lo <= hi"
            )));
        }
        Ok(())
    };
    check_range(config.doc_tokens, "doc")?;
    check_range(config.query_tokens, "query")?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let common: Vec<f64> = if config.mean_scale != 0.0 {
        random_unit(&mut rng, config.d)
            .into_iter()
            .map(|v| v * config.mean_scale)
            .collect()
    } else {
        vec![0.0; config.d]
    };
    let topics: Vec<Vec<f64>> = if config.orthogonal_topics {
        (0..config.topics)
            .map(|t| {
                let mut v = vec![0.0; config.d];
                v[t] = 1.0;
                v
            })
            .collect()
    } else {
        (0..config.topics)
            .map(|_| random_unit(&mut rng, config.d))
            .collect()
    };

    let make_token = |rng: &mut ChaCha8Rng, topic: &[f64]| -> DenseVector {
        let mut v: Vec<f64> = topic.to_vec();
        for (x, m) in v.iter_mut().zip(common.iter()) {
            *x += m;
        }
        if config.noise > 0.0 {
            for x in v.iter_mut() {
                *x += config.noise * gaussian(rng);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for x in v.iter_mut() {
                *x /= norm;
            }
        } else {
            v[0] = 1.0;
        }
        DenseVector::new(v).expect("synthetic tokens are finite")
    };

    let mut docs = Vec::with_capacity(config.docs as usize);
    let mut doc_topics = Vec::with_capacity(config.docs as usize);
    for doc_id in 0..config.docs {
        let topic = rng.gen_range(0..config.topics);
        let count = rng.gen_range(config.doc_tokens.0..=config.doc_tokens.1);
        let tokens: Vec<DenseVector> = (0..count)
            .map(|_| make_token(&mut rng, &topics[topic]))
            .collect();
        docs.push((doc_id, DenseTokenBag::new(tokens)?));
        doc_topics.push(topic);
    }

    let mut queries = Vec::with_capacity(config.queries as usize);
    let mut query_topics = Vec::with_capacity(config.queries as usize);
    let mut labels = Vec::new();
    for query_id in 0..config.queries {
        let topic = rng.gen_range(0..config.topics);
        let count = rng.gen_range(config.query_tokens.0..=config.query_tokens.1);
        let tokens: Vec<DenseVector> = (0..count)
            .map(|_| make_token(&mut rng, &topics[topic]))
            .collect();
        queries.push((query_id, DenseTokenBag::new(tokens)?));
        query_topics.push(topic);
        for (doc_id, &doc_topic) in doc_topics.iter().enumerate() {
            if doc_topic == topic {
                labels.push((query_id, doc_id as u64));
            }
        }
    }

    Ok(SynthOutput {
        docs,
        queries,
        labels,
        doc_topics,
        query_topics,
    })
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
