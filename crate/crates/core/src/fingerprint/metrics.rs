use crate::error::{invalid, Result};

fn check_lengths(predicted: &[usize], truth: &[usize]) -> Result<()> {
    if predicted.len() != truth.len() {
        return invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        ));
    }
    if predicted.is_empty() {
        return invalid("no predictions to score");
    }
    Ok(())
}

/// Mean Euclidean distance (meters) between predicted and true reference
/// point coordinates.
pub fn mean_localization_error(
    predicted: &[usize],
    truth: &[usize],
    coords: &[Option<[f64; 2]>],
) -> Result<f64> {
    check_lengths(predicted, truth)?;
    let lookup = |label: usize| -> Result<[f64; 2]> {
        match coords.get(label) {
            Some(Some(c)) => Ok(*c),
            _ => invalid(format!("reference point {label} has no coordinates")),
        }
    };
    let mut total = 0.0;
    for (&p, &t) in predicted.iter().zip(truth) {
        let (a, b) = (lookup(p)?, lookup(t)?);
        total += (a[0] - b[0]).hypot(a[1] - b[1]);
    }
    Ok(total / predicted.len() as f64)
}

pub fn top1_accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(predicted, truth)?;
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Vec<Option<[f64; 2]>> {
        (0..n).map(|i| Some([i as f64, 0.0])).collect()
    }

    #[test]
    fn localization_error_cases() {
        let c = line(10);
        let truth = vec![1, 2, 3, 4];
        assert_eq!(mean_localization_error(&truth, &truth, &c).unwrap(), 0.0);
        assert_eq!(
            mean_localization_error(&[2, 3, 4, 5], &truth, &c).unwrap(),
            1.0
        );
        assert_eq!(
            mean_localization_error(&[1, 3, 3, 5], &truth, &c).unwrap(),
            0.5
        );
        let mut sparse = line(10);
        sparse[5] = None;
        assert!(mean_localization_error(&[5], &[4], &sparse).is_err());
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(top1_accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(top1_accuracy(&[0, 0], &[1, 2]).unwrap(), 0.0);
        assert_eq!(top1_accuracy(&[1, 2, 3, 0], &[1, 2, 3, 4]).unwrap(), 0.75);
        assert!(top1_accuracy(&[], &[]).is_err());
        assert!(top1_accuracy(&[1], &[1, 2]).is_err());
    }
}
