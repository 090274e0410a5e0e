use super::{GridScore, Voice};
use crate::error::Result;

/// CSV table `step,S,A,T,B,chord`, one row per step; rests are empty cells.
pub fn export_pianoroll(score: &GridScore) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["step", "S", "A", "T", "B", "chord"])?;
    for (i, step) in score.steps().iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(
            Voice::ALL
                .iter()
                .map(|&v| step.voice(v).midi().map(|m| m.to_string()).unwrap_or_default()),
        );
        row.push(step.chord.to_string());
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv of ascii fields"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{ChordLabel, GridStep, Pitch, Quality};

    #[test]
    fn rows_and_rests() {
        let c = ChordLabel::triad(0, Quality::Major);
        let p = |m| Pitch::new(m).unwrap();
        let score = GridScore::new(
            "x",
            vec![
                GridStep::new(c, [p(67), p(64), p(60), p(48)]),
                GridStep::new(c, [Pitch::REST; 4]),
            ],
        )
        .unwrap();
        let csv = export_pianoroll(&score).unwrap();
        assert_eq!(csv, "step,S,A,T,B,chord\n0,67,64,60,48,C:maj\n1,,,,,C:maj\n");
        assert_eq!(csv.lines().count(), score.len() + 1);
        assert!(!csv.contains('\r'));
    }
}
