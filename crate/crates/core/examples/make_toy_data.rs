//! Writes the small file-based task bundled under `data/toy/`.
//!
//! ```text
//! cargo run --example make_toy_data -- data/toy
//! ```

use std::fs;
use std::path::PathBuf;

use embedcal::records::{write_jsonl, ClassRef, EmbeddingRecord, LabelRecord};
use embedcal::task::{SyntheticTask, TaskSpec};

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/toy".into()));
    fs::create_dir_all(&dir).unwrap();
    let spec = TaskSpec { num_classes: 3, dim: 8, init_per_class: 4, test_per_class: 40, ..TaskSpec::default() };
    let task = SyntheticTask::generate(spec, 2024).unwrap();

    let names = ["alpha", "beta", "gamma"];
    let labels: Vec<LabelRecord> = task
        .labels
        .iter()
        .zip(names)
        .map(|(l, name)| LabelRecord {
            class: l.class.0,
            name: name.into(),
            description: format!("toy class {name}"),
            vector: Some(l.embedding.clone()),
        })
        .collect();
    write_jsonl(&dir.join("labels.jsonl"), &labels).unwrap();
    write_jsonl(&dir.join("train.jsonl"), &task.train.to_records()).unwrap();
    let test: Vec<EmbeddingRecord> = task
        .test
        .iter()
        .map(|(v, c)| EmbeddingRecord {
            id: None,
            class: ClassRef::Name(names[c.index()].into()),
            vector: Some(v.clone()),
            text: None,
            origin: None,
            round: None,
        })
        .collect();
    write_jsonl(&dir.join("test.jsonl"), &test).unwrap();
    fs::write(dir.join("means.json"), serde_json::to_string(&task.means).unwrap() + "\n").unwrap();
    fs::write(
        dir.join("config.toml"),
        "[train]\nrounds = 10\naug_rounds = 6\ndelta_n = 2\nbatch_size = 8\nseed = 1\n\n\
         [task]\nkind = \"files\"\nlabels = \"labels.jsonl\"\ntrain = \"train.jsonl\"\ntest = \"test.jsonl\"\nmeans = \"means.json\"\n\n\
         [generator]\nkind = \"gaussian_oracle\"\nsigma = 1.0\n",
    )
    .unwrap();
}
