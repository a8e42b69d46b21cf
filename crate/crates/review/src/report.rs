use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use base64::Engine;
use serde::Serialize;

use crate::{ReviewError, ReviewItem, ReviewState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportSummary {
    pub items: usize,
    pub flagged: usize,
    pub pages: Vec<PathBuf>,
}

const STYLE: &str = "body{font-family:sans-serif;margin:2em;max-width:70em}\
.item{border:1px solid #bbb;padding:1em;margin:1em 0}\
.item.flagged{border:3px solid #c60}\
.badge{display:inline-block;padding:0 .4em;margin-right:.4em;background:#eee}\
.badge.flag{background:#c60;color:#fff}\
img{max-width:100%;border:1px solid #ddd}\
pre{white-space:pre-wrap;background:#f6f6f6;padding:.5em}\
table{border-collapse:collapse}td,th{border:1px solid #ccc;padding:.2em .6em}";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn page(title: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html lang=\"en\"><head><meta charset=\"utf-8\"><title>{}</title><style>{STYLE}</style></head>\n<body>\n{body}</body></html>\n",
        escape(title)
    )
}

fn page_name(question_id: &str) -> String {
    let safe: String = question_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("question_{safe}.html")
}

fn item_html(item: &ReviewItem, crop_png: &[u8]) -> String {
    let s = &item.summary;
    let mut h = String::new();
    let class = if item.flagged() {
        "item flagged"
    } else {
        "item"
    };
    let _ = writeln!(
        h,
        "<section class=\"{class}\" id=\"{}\">",
        escape(&item.submission_ref)
    );
    let _ = write!(h, "<h3>{}", escape(&item.submission_ref));
    if item.flagged() {
        h.push_str(" <span class=\"badge flag\">FLAGGED</span>");
    }
    h.push_str("</h3>\n");
    let _ = writeln!(
        h,
        "<img alt=\"answer {}\" src=\"data:image/png;base64,{}\">",
        escape(&item.submission_ref),
        base64::engine::general_purpose::STANDARD.encode(crop_png)
    );
    h.push_str("<table><tr><th>pass</th>");
    for i in 0..item.pass_scores.len() {
        let _ = write!(h, "<td>{}</td>", i + 1);
    }
    h.push_str("</tr>\n<tr><th>score</th>");
    for score in &item.pass_scores {
        let _ = write!(h, "<td>{score}</td>");
    }
    h.push_str("</tr>\n<tr><th>alt. approach</th>");
    for alt in &item.alt_flags {
        let _ = write!(h, "<td>{}</td>", if *alt { "yes" } else { "" });
    }
    h.push_str("</tr></table>\n");
    let _ = writeln!(
        h,
        "<p><span class=\"badge\">provisional {} ({})</span><span class=\"badge\">spread {}</span>\
<span class=\"badge\">variance {:.2}</span><span class=\"badge\">anomaly {:.2}</span>\
<span class=\"badge\">median {}</span><span class=\"badge\">mean {:.2}</span></p>",
        item.provisional_score, item.rule, s.spread, s.variance, s.anomaly, s.median, s.mean
    );
    if let Some(d) = &item.decision {
        let _ = writeln!(
            h,
            "<p>Decision: {} {} by {}{}</p>",
            d.action,
            d.final_score,
            escape(&d.reviewer_id),
            if d.note.is_empty() {
                String::new()
            } else {
                format!(" ({})", escape(&d.note))
            }
        );
    }
    for (i, text) in item.rationales.iter().enumerate() {
        let _ = writeln!(
            h,
            "<details><summary>Rationale, pass {}</summary><pre>{}</pre></details>",
            i + 1,
            escape(text)
        );
    }
    h.push_str("</section>\n");
    h
}

/// Write a self-contained HTML report (no external fetches) into `out_dir`:
/// an index and one page per question, crops inlined as data URIs.
pub fn build_review_report(
    state: &ReviewState,
    out_dir: impl AsRef<Path>,
) -> Result<ReportSummary, ReviewError> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| ReviewError::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let items = state.items();
    let mut by_question: BTreeMap<(String, String), Vec<&ReviewItem>> = BTreeMap::new();
    for item in &items {
        by_question
            .entry((item.test_id.clone(), item.question_id.clone()))
            .or_default()
            .push(item);
    }
    let flagged = items.iter().filter(|i| i.flagged()).count();
    let write = |path: PathBuf, text: String| {
        std::fs::write(&path, text).map_err(|e| ReviewError::Io { path, source: e })
    };

    let mut pages = Vec::new();
    let mut index = format!(
        "<h1>Review report</h1>\n<p id=\"counts\">{} submissions, {} flagged, {} questions</p>\n<ul>\n",
        items.len(),
        flagged,
        by_question.len()
    );
    for ((test_id, question_id), group) in &by_question {
        let name = page_name(question_id);
        let group_flagged = group.iter().filter(|i| i.flagged()).count();
        let _ = writeln!(
            index,
            "<li><a href=\"{name}\">{} / {}</a>: {} submissions, {} flagged</li>",
            escape(test_id),
            escape(question_id),
            group.len(),
            group_flagged
        );
        let mut body = format!(
            "<p><a href=\"index.html\">index</a></p>\n<h1>{} / {}</h1>\n<p>{} submissions, {} flagged</p>\n",
            escape(test_id),
            escape(question_id),
            group.len(),
            group_flagged
        );
        for item in group {
            let path = state
                .job()
                .crop_file(&item.crop_file)
                .ok_or_else(|| ReviewError::MissingCrop(item.crop_file.clone()))?;
            let png = std::fs::read(&path)
                .map_err(|_| ReviewError::MissingCrop(item.crop_file.clone()))?;
            body.push_str(&item_html(item, &png));
        }
        let path = out_dir.join(&name);
        write(
            path.clone(),
            page(&format!("{test_id} {question_id}"), &body),
        )?;
        pages.push(path);
    }
    index.push_str("</ul>\n");
    let index_path = out_dir.join("index.html");
    write(index_path.clone(), page("Review report", &index))?;
    pages.insert(0, index_path);
    Ok(ReportSummary {
        items: items.len(),
        flagged,
        pages,
    })
}
