//! Planted-answer fixture: every question's answer phrase occurs in exactly
//! one fatwa, and no distractor phrase occurs anywhere in the corpus.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hybridrag_cli::config::{Overrides, RunConfig};

pub const SUBJECTS: [&str; 20] = [
    "الذهب", "الفضة", "الإبل", "البقر", "الغنم", "التمر", "الزبيب", "القمح", "الشعير", "الركاز",
    "المعادن", "العسل", "اللؤلؤ", "المرجان", "الخيل", "الديون", "التجارة", "العقار", "الزروع", "الأجرة",
];

pub const ANSWERS: [&str; 20] = [
    "ربع العشر بعد الحول", "خمسة دراهم من المائتين", "شاة عن كل خمس", "تبيع عن كل ثلاثين",
    "شاة عن كل أربعين", "العشر فيما سقت السماء", "نصف العشر بالنضح", "خمسة أوسق نصابا",
    "يضم إلى القمح عند بعضهم", "الخمس في الحال", "ربع العشر عند الاستخراج", "العشر عند بعض الأئمة",
    "لا شيء فيه إلا للتجارة", "يلحق باللؤلؤ حكما", "لا زكاة في خيل الركوب", "تزكى إذا قبضت",
    "تقوم آخر الحول", "تزكى غلته إذا حال", "العشر يوم الحصاد", "يزكى الصافي منها",
];

pub const DISTRACTORS: [&str; 12] = [
    "ثلث المال كاملا", "سبع البدنة دائما", "نصف الدخل شهريا", "مد عن كل نفس",
    "صاعان في كل رمضان", "سدس الموروث فقط", "مائة مثقال مقدما", "قيراط عن كل بيت",
    "درهم عن كل سوق", "ثمن الغلة سنويا", "جذعة عن كل عشر", "عشرون دينارا مؤجلة",
];

const FILLER: [&str; 24] = [
    "الصلاة", "الطهارة", "الوضوء", "الغسل", "التيمم", "الصيام", "الاعتكاف", "الحج", "العمرة", "النكاح",
    "الطلاق", "العدة", "الرضاع", "النفقة", "البيع", "الربا", "الرهن", "الوقف", "الوصية", "الجنايات",
    "القسامة", "الأيمان", "النذور", "القضاء",
];

pub const LETTERS: [&str; 4] = ["A", "B", "C", "D"];

pub fn gold_letter(i: usize) -> &'static str {
    LETTERS[i % 4]
}

/// Fatwa id of the chunk holding question `i`'s answer.
pub fn gold_chunk(i: usize) -> String {
    format!("fatawa.jsonl#{i}:0")
}

fn filler_sentence(seed: usize, words: usize) -> String {
    (0..words)
        .map(|j| FILLER[(seed * 7 + j * 5 + j * j) % FILLER.len()])
        .collect::<Vec<_>>()
        .join(" و")
}

/// Writes the source files and returns (sources dir, dataset path).
pub fn write_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let src = dir.join("sources");
    std::fs::create_dir_all(&src).unwrap();
    let mut fatwas = String::new();
    for (s, a) in SUBJECTS.iter().zip(ANSWERS) {
        let rec = serde_json::json!({
            "category": "زكاة",
            "question": format!("ما الواجب في زكاة {s}؟"),
            "answer": format!("الواجب في زكاة {s} هو {a} عند جمهور الفقهاء."),
        });
        fatwas.push_str(&rec.to_string());
        fatwas.push('\n');
    }
    for i in 0..40 {
        let rec = serde_json::json!({
            "category": "عام",
            "question": format!("سؤال في {}؟", FILLER[i % FILLER.len()]),
            "answer": filler_sentence(i, 12),
        });
        fatwas.push_str(&rec.to_string());
        fatwas.push('\n');
    }
    std::fs::write(src.join("fatawa.jsonl"), fatwas).unwrap();

    let paras: Vec<String> = (0..30).map(|i| format!("<p>{}.</p>", filler_sentence(100 + i, 30))).collect();
    std::fs::write(
        src.join("book.html"),
        format!("<html><head><title>كتاب</title></head><body>{}</body></html>", paras.join("\n")),
    )
    .unwrap();

    let mut data = String::new();
    for (i, s) in SUBJECTS.iter().enumerate() {
        let gold = i % 4;
        let mut opts = serde_json::Map::new();
        for (slot, letter) in LETTERS.iter().enumerate() {
            let text = if slot == gold {
                ANSWERS[i].to_owned()
            } else {
                DISTRACTORS[(i + slot) % DISTRACTORS.len()].to_owned()
            };
            opts.insert((*letter).into(), text.into());
        }
        let level = ["beginner", "intermediate", "advanced"][i % 3];
        let rec = serde_json::json!({
            "id": format!("q{i:02}"),
            "question": format!("ما الواجب في زكاة {s}؟"),
            "options": opts,
            "answer": gold_letter(i),
            "level": level,
        });
        data.push_str(&rec.to_string());
        data.push('\n');
    }
    let dataset = dir.join("dataset.jsonl");
    std::fs::write(&dataset, data).unwrap();
    (src, dataset)
}

/// Stub-provider config with all artifacts under `dir/work`.
pub fn stub_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.apply(&Overrides {
        stub_providers: true,
        kb: Some(dir.join("work/kb.jsonl")),
        index: Some(dir.join("work/bm25.jsonl")),
        vectors: Some(dir.join("work/vectors.bin")),
        ..Overrides::default()
    });
    cfg
}
