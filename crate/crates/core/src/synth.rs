//! Seeded synthetic corpus in the shape of family histories and CT reports,
//! annotated for the demo type registry.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{AnnotatedDocument, Dependency, Entity};
use crate::span::{char_len, Span};

const MEMBERS: &[&str] = &["母亲", "父亲", "哥哥", "姐姐", "祖母", "外公"];
const DISEASES: &[&str] = &["高血压", "糖尿病", "冠心病", "哮喘", "胃癌", "肺癌", "脑卒中", "痛风"];
const BODY_PARTS: &[&str] = &["腹腔", "胆囊窝", "肝脏", "脾脏", "左肾", "右肺", "胰腺", "膀胱"];
const ABNORMALITIES: &[&str] = &["积液", "积气", "低密度影", "结节", "钙化灶", "囊肿", "增厚", "水肿"];

#[derive(Default)]
struct Builder {
    text: String,
    len: usize,
    entities: Vec<Entity>,
    dependencies: Vec<Dependency>,
}

impl Builder {
    fn lit(&mut self, s: &str) {
        self.text.push_str(s);
        self.len += char_len(s);
    }

    fn entity(&mut self, text: &str, ty: &str) -> String {
        let id = format!("e{}", self.entities.len());
        let span = Span { start: self.len, end: self.len + char_len(text) };
        self.entities.push(Entity { id: id.clone(), text: text.into(), entity_type: ty.into(), span });
        self.lit(text);
        id
    }

    /// Entities joined with "、", returning their ids.
    fn list(&mut self, items: &[&str], ty: &str) -> Vec<String> {
        let mut ids = Vec::new();
        for (i, t) in items.iter().enumerate() {
            if i > 0 {
                self.lit("、");
            }
            ids.push(self.entity(t, ty));
        }
        ids
    }

    fn link(&mut self, from: &[String], to: &[String]) {
        for f in from {
            for t in to {
                self.dependencies.push(Dependency { from: f.clone(), to: t.clone() });
            }
        }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str], n: std::ops::RangeInclusive<usize>) -> Vec<&'a str> {
    let n = rng.gen_range(n);
    pool.choose_multiple(rng, n).copied().collect()
}

fn family_history(rng: &mut ChaCha8Rng) -> Builder {
    let mut b = Builder::default();
    for _ in 0..rng.gen_range(2..=4) {
        match rng.gen_range(0..10) {
            0..=5 => {
                let m = b.list(&pick(rng, MEMBERS, 1..=1), "family_member");
                b.lit("患有");
                let d = b.list(&pick(rng, DISEASES, 1..=3), "disease");
                b.link(&m, &d);
            }
            6..=8 => {
                let m = b.list(&pick(rng, MEMBERS, 2..=3), "family_member");
                b.lit("均患有");
                let d = b.list(&pick(rng, DISEASES, 1..=1), "disease");
                b.link(&m, &d);
            }
            _ => b.lit("否认家族遗传病史"),
        }
        b.lit(if rng.gen_bool(0.8) { "。" } else { "；" });
    }
    b
}

fn ct_report(rng: &mut ChaCha8Rng) -> Builder {
    let mut b = Builder::default();
    for _ in 0..rng.gen_range(2..=4) {
        match rng.gen_range(0..10) {
            0..=5 => {
                let p = b.list(&pick(rng, BODY_PARTS, 1..=1), "body_part");
                b.lit("见");
                let a = b.list(&pick(rng, ABNORMALITIES, 1..=3), "abnormality");
                b.link(&p, &a);
            }
            6..=8 => {
                let p = b.list(&pick(rng, BODY_PARTS, 2..=2), "body_part");
                b.lit("均见");
                let a = b.list(&pick(rng, ABNORMALITIES, 1..=1), "abnormality");
                b.link(&p, &a);
            }
            _ => b.lit("余未见明显异常"),
        }
        b.lit(if rng.gen_bool(0.7) { "；" } else { "。" });
    }
    b
}

/// `n_docs` documents alternating between family histories and CT reports.
/// Many-to-one links appear both as adjacent right entities ("A患有X、Y") and
/// adjacent left entities ("A、B均患有X").
pub fn synthetic_corpus(n_docs: usize, seed: u64) -> Vec<AnnotatedDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| {
            let (kind, b) = if i % 2 == 0 {
                ("family_history", family_history(&mut rng))
            } else {
                ("ct_report", ct_report(&mut rng))
            };
            AnnotatedDocument {
                doc_id: format!("synth-{i:04}"),
                doc_kind: kind.into(),
                text: b.text,
                entities: b.entities,
                dependencies: b.dependencies,
            }
        })
        .collect()
}
