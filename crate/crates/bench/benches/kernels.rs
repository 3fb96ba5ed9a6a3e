use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use mtens_core::features::tfidf::{NgramMode, TfIdfVectorizer};
use mtens_core::features::tokenize;
use mtens_core::params::Optimizer;
use mtens_core::synthetic::{keyword_corpus, keyword_embeddings, keyword_tasks};
use mtens_core::train::train_step;
use mtens_core::{
    EncoderKind, EnsembleDescriptor, EnsembleModel, FeatureMode, ModelDescriptor, MultiTaskModel,
    Network, Problem, SeededRng, Target, Tensor,
};

fn random(rows: usize, cols: usize, rng: &mut SeededRng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Tensor::new(data, vec![rows, cols]).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = SeededRng::new(1);
    let a = random(64, 512, &mut rng);
    let b = random(512, 256, &mut rng);
    c.bench_function("matmul 64x512x256", |bench| {
        bench.iter(|| black_box(a.matmul(&b).unwrap()))
    });
}

fn lstm_forward(c: &mut Criterion) {
    let corpus = keyword_corpus(64, 7);
    let table = keyword_embeddings(300, 8);
    let model = MultiTaskModel::new(ModelDescriptor {
        encoder: EncoderKind::Lstm,
        tasks: keyword_tasks(),
        input_dim: table.dim(),
        max_len: 16,
        seed: 1,
    })
    .unwrap();
    let tokens: Vec<Vec<String>> = corpus.iter().map(|i| tokenize(&i.text)).collect();
    let inputs = model.encode_inputs(&tokens, &table).unwrap();
    c.bench_function("lstm predict 64 sentences", |bench| {
        bench.iter(|| black_box(model.predict(&inputs, 64).unwrap()))
    });
}

fn tfidf(c: &mut Criterion) {
    let corpus = keyword_corpus(500, 3);
    let texts: Vec<&str> = corpus.iter().map(|i| i.text.as_str()).collect();
    c.bench_function("tfidf fit char 500 docs", |bench| {
        bench.iter(|| black_box(TfIdfVectorizer::fit(&texts, NgramMode::Char).unwrap()))
    });
    let model = TfIdfVectorizer::fit(&texts, NgramMode::Word).unwrap();
    c.bench_function("tfidf transform word 500 docs", |bench| {
        bench.iter(|| {
            texts
                .iter()
                .map(|t| model.transform(t).len())
                .sum::<usize>()
        })
    });
}

fn ensemble_step(c: &mut Criterion) {
    let tasks = Problem::CoarseEmotion.tasks();
    let mut rng = SeededRng::new(2);
    let rows: Vec<Vec<f64>> = (0..32)
        .map(|_| (0..512).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    let targets: Vec<Vec<Target>> = (0..32)
        .map(|i| vec![Target::Class(i % 4), Target::Score(0.5)])
        .collect();
    let descriptor = EnsembleDescriptor {
        tasks,
        features: FeatureMode::Projected,
        seed: 3,
    };
    let inputs: Vec<&Vec<f64>> = rows.iter().collect();
    let refs: Vec<&[Target]> = targets.iter().map(Vec::as_slice).collect();
    c.bench_function("ensemble train step batch 32", |bench| {
        bench.iter_batched(
            || {
                let m = EnsembleModel::new(descriptor.clone()).unwrap();
                let opt = Optimizer::new(m.params());
                (m, opt, SeededRng::new(4))
            },
            |(mut m, mut opt, mut rng)| {
                black_box(
                    train_step(
                        &mut m,
                        &mut opt,
                        &inputs,
                        &refs,
                        &[1.0, 1.0],
                        &[true, true],
                        &mut rng,
                    )
                    .unwrap(),
                )
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, matmul, lstm_forward, tfidf, ensemble_step);
criterion_main!(benches);
