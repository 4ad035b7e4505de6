use std::sync::Mutex;

use super::*;
use crate::corpus::Chunk;
use crate::dense::{embed_corpus, EmbedOptions, EmbeddingCache, HashedTrigramEmbedder};
use crate::rerank::OverlapScorer;

struct World {
    kb: KnowledgeBase,
    index: Bm25Index,
    vectors: VectorStore,
    normalizer: Normalizer,
    embedder: HashedTrigramEmbedder,
}

impl World {
    fn new(texts: &[&str]) -> Self {
        let normalizer = Normalizer::default();
        let chunks: Vec<Chunk> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Chunk::from_original("kb", i as u32, (*t).to_owned(), &normalizer))
            .collect();
        let embedder = HashedTrigramEmbedder::default();
        let vectors = embed_corpus(&embedder, &chunks, &mut EmbeddingCache::for_provider(&embedder), &EmbedOptions::default()).unwrap();
        let index = Bm25Index::build(&chunks, Bm25Params::default()).unwrap();
        Self {
            kb: KnowledgeBase::new(chunks).unwrap(),
            index,
            vectors,
            normalizer,
            embedder,
        }
    }

    fn retriever(&self) -> Retriever<'_> {
        Retriever {
            kb: &self.kb,
            sparse: &self.index,
            vectors: &self.vectors,
            normalizer: &self.normalizer,
            embedder: &self.embedder,
            scorer: &OverlapScorer,
            retry: RetryPolicy::immediate(1),
        }
    }
}

fn item(id: &str, q: &str, opts: &[&str], gold: char) -> McqItem {
    McqItem {
        id: id.into(),
        question: q.into(),
        options: opts
            .iter()
            .zip(Letter::ALL)
            .map(|(t, l)| (l, (*t).to_owned()))
            .collect(),
        gold: Letter::from_char(gold),
        difficulty: None,
    }
}

const CORPUS: &[&str] = &[
    "زكاة الفطر صاع من طعام تخرج قبل صلاة العيد",
    "صلاة الفجر ركعتان يجهر فيهما بالقراءة",
    "نصاب الذهب عشرون مثقالا إذا حال عليه الحول",
    "الوضوء شرط لصحة الصلاة عند جمهور الفقهاء",
];

fn run(world: &World, llm: &dyn LlmProvider, mode: Mode, it: &McqItem, cfg: &PipelineConfig) -> PipelineOutcome {
    let template = PromptTemplate::bundled();
    Pipeline {
        retriever: Some(world.retriever()),
        llm,
        template: &template,
        examples: &[],
        cfg,
        mode,
        retry: RetryPolicy::immediate(3),
    }
    .run(it)
    .unwrap()
}

#[test]
fn fixed_stub_passes_through_with_full_trace() {
    let w = World::new(CORPUS);
    let it = item("q1", "كم ركعة صلاة الفجر؟", &["ركعتان", "ثلاث", "أربع"], 'A');
    let out = run(&w, &FixedLetterLlm(Letter::from_char('A').unwrap()), Mode::Rag, &it, &PipelineConfig::default());
    assert_eq!(out.predicted, Letter::from_char('A'));
    let t = &out.trace;
    assert_eq!(t.stages_run, ["sparse", "dense", "rerank"]);
    assert!(!t.rerank.is_empty() && t.rerank.len() <= 5);
    assert_eq!(t.rerank[0].id, "kb:1");
    for h in &t.rerank {
        assert!(t.dense.iter().any(|d| d.id == h.id));
    }
    for h in &t.dense {
        assert!(t.sparse.iter().any(|s| s.id == h.id));
    }
    assert!(t.prompt.contains(CORPUS[1]), "contexts carry original text");
    assert_eq!(t.responses, ["A"]);
}

#[test]
fn no_lexical_match_still_calls_the_model() {
    let w = World::new(CORPUS);
    let it = item("q2", "xyz qqq", &["abc", "def"], 'B');
    let out = run(&w, &FixedLetterLlm(Letter::from_char('B').unwrap()), Mode::Rag, &it, &PipelineConfig::default());
    assert_eq!(out.trace.stages_run, ["sparse"]);
    assert!(out.trace.sparse.is_empty());
    assert!(out.trace.prompt.contains("(no reference text retrieved)"));
    assert_eq!(out.predicted, Letter::from_char('B'));
}

#[test]
fn baseline_runs_no_retrieval() {
    let w = World::new(CORPUS);
    let it = item("q3", "كم ركعة صلاة الفجر؟", &["ركعتان", "ثلاث"], 'A');
    let out = run(&w, &EchoLlm::default(), Mode::Baseline, &it, &PipelineConfig::default());
    assert!(out.trace.stages_run.is_empty());
    assert!(out.trace.sparse.is_empty() && out.trace.dense.is_empty() && out.trace.rerank.is_empty());
    assert!(!out.trace.prompt.contains("reference text"));
}

#[test]
fn echo_stub_finds_the_planted_answer() {
    let w = World::new(CORPUS);
    let it = item("q4", "ما نصاب الذهب؟", &["خمسة أوسق", "عشرون مثقالا", "مائتا درهم"], 'B');
    let out = run(&w, &EchoLlm::default(), Mode::Rag, &it, &PipelineConfig::default());
    assert!(out.trace.rerank.iter().any(|h| h.id == "kb:2"));
    assert_eq!(out.predicted, Letter::from_char('B'));
    let base = run(&w, &EchoLlm::default(), Mode::Baseline, &it, &PipelineConfig::default());
    assert_eq!(base.predicted, Letter::from_char('A'));
}

struct Scripted(Mutex<Vec<&'static str>>);

impl LlmProvider for Scripted {
    fn id(&self) -> &str {
        "scripted"
    }
    fn complete(&self, _: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        let mut q = self.0.lock().unwrap();
        if q.is_empty() {
            return Err(ProviderError::Transport("script exhausted".into()));
        }
        Ok(q.remove(0).to_owned())
    }
}

#[test]
fn unparseable_answers_retry_once_then_become_invalid() {
    let w = World::new(CORPUS);
    let it = item("q5", "سؤال", &["x", "y"], 'A');
    let llm = Scripted(Mutex::new(vec!["hmm", "B"]));
    let out = run(&w, &llm, Mode::Baseline, &it, &PipelineConfig::default());
    assert_eq!(out.predicted, Letter::from_char('B'));
    assert_eq!(out.trace.responses, ["hmm", "B"]);

    let llm = Scripted(Mutex::new(vec!["A or B", "no idea"]));
    let out = run(&w, &llm, Mode::Baseline, &it, &PipelineConfig::default());
    assert_eq!(out.predicted, None);
    assert!(out.trace.parse_error.is_some());
}

#[test]
fn transport_failure_propagates_with_stage() {
    let w = World::new(CORPUS);
    let template = PromptTemplate::bundled();
    let cfg = PipelineConfig::default();
    let err = Pipeline {
        retriever: Some(w.retriever()),
        llm: &Scripted(Mutex::new(vec![])),
        template: &template,
        examples: &[],
        cfg: &cfg,
        mode: Mode::Baseline,
        retry: RetryPolicy::immediate(3),
    }
    .run(&item("q6", "سؤال", &["x", "y"], 'A'))
    .unwrap_err();
    assert!(matches!(err, PipelineError::Llm { attempts: 3, .. }));
    assert!(err.to_string().starts_with("llm stage"));
}

#[test]
fn pipeline_is_deterministic() {
    let w = World::new(CORPUS);
    let it = item("q7", "زكاة الفطر متى تخرج؟", &["قبل صلاة العيد", "بعد العصر"], 'A');
    let a = run(&w, &EchoLlm::default(), Mode::Rag, &it, &PipelineConfig::default());
    let b = run(&w, &EchoLlm::default(), Mode::Rag, &it, &PipelineConfig::default());
    assert_eq!(a, b);
}

#[test]
fn config_validation() {
    assert!(PipelineConfig::default().validate().is_ok());
    let bad = PipelineConfig {
        k: 300,
        ..PipelineConfig::default()
    };
    assert!(matches!(bad.validate(), Err(PipelineError::Config(_))));
    let bad = PipelineConfig {
        rerank_temperature: 0.0,
        ..PipelineConfig::default()
    };
    assert!(bad.validate().is_err());
}

fn dev(n: usize) -> Vec<McqItem> {
    (0..n).map(|i| item(&format!("d{i:02}"), "س", &["x", "y"], 'A')).collect()
}

#[test]
fn few_shot_selection() {
    assert!(select_few_shot(&dev(10), 0, 7).unwrap().is_empty());
    let a = select_few_shot(&dev(10), 2, 7).unwrap();
    assert_eq!(a, select_few_shot(&dev(10), 2, 7).unwrap());
    assert_eq!(a.len(), 2);
    assert_ne!(a[0].id, a[1].id);
    let mut reversed = dev(10);
    reversed.reverse();
    assert_eq!(a, select_few_shot(&reversed, 2, 7).unwrap());
    let mut unlabeled = dev(3);
    unlabeled[0].gold = None;
    assert!(matches!(
        select_few_shot(&unlabeled, 3, 1),
        Err(PipelineError::InsufficientExamples { needed: 3, available: 2 })
    ));
}

#[test]
fn letters_and_items_validate() {
    assert!("G".parse::<Letter>().is_err());
    assert!("AB".parse::<Letter>().is_err());
    assert_eq!(serde_json::to_string(&Letter::from_char('C').unwrap()).unwrap(), "\"C\"");
    let it = item("x", "q", &["a"], 'A');
    assert!(it.validate().is_err());
    let mut it = item("x", "q", &["a", "b"], 'A');
    it.gold = Letter::from_char('D');
    assert!(it.validate().is_err());
}
