use crate::fixture::sample_bank;
use crate::geometry::Rect;
use crate::keybank::{assemble_prompt, PromptBundle};
use crate::sheet::AnswerCrop;

pub(crate) fn bundle() -> PromptBundle {
    let (q, s, k) = sample_bank().remove(0);
    let image = crate::fixture::synthetic_answer(1, 64, 32);
    let crop = AnswerCrop::new("0a1b2c3d4e5f", "Q1", image, Rect::new(0.0, 0.0, 64.0, 32.0));
    assemble_prompt(&q, &s, &k, &crop).unwrap()
}
