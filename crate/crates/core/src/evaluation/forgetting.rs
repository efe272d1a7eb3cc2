use std::io::Write;

use super::MetricsError;

/// `R[j][i]`: mean eval return on eval task `i` after training experience
/// `j`. Rows are filled in order; a row that was never evaluated stays empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgettingMatrix {
    rows: Vec<Vec<Option<f64>>>,
    n_tasks: usize,
    filled: Option<usize>,
}

impl ForgettingMatrix {
    pub fn new(n_experiences: usize, n_tasks: usize) -> Self {
        ForgettingMatrix {
            rows: vec![vec![None; n_tasks]; n_experiences],
            n_tasks,
            filled: None,
        }
    }

    pub fn n_experiences(&self) -> usize {
        self.rows.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    /// Store the evaluation taken after experience `j`. Rows must be set in
    /// increasing order, so no row can see a later evaluation.
    pub fn set_row(&mut self, j: usize, returns: &[f64]) -> Result<(), MetricsError> {
        if j >= self.rows.len() || returns.len() != self.n_tasks {
            return Err(MetricsError::Forgetting(format!(
                "row {j} with {} values does not fit a {}x{} matrix",
                returns.len(),
                self.rows.len(),
                self.n_tasks
            )));
        }
        if self.filled.is_some_and(|f| j <= f) {
            return Err(MetricsError::Forgetting(format!(
                "row {j} set after row {}",
                self.filled.unwrap()
            )));
        }
        self.rows[j] = returns.iter().map(|&v| Some(v)).collect();
        self.filled = Some(j);
        Ok(())
    }

    pub fn get(&self, j: usize, i: usize) -> Option<f64> {
        self.rows.get(j)?.get(i).copied().flatten()
    }

    pub fn row(&self, j: usize) -> &[Option<f64>] {
        &self.rows[j]
    }

    /// `max_{j' <= j} R[j'][i] - R[j][i]`, over the rows that exist.
    pub fn forgetting(&self, i: usize, j: usize) -> Option<f64> {
        let now = self.get(j, i)?;
        let best = (0..=j)
            .filter_map(|k| self.get(k, i))
            .fold(f64::NEG_INFINITY, f64::max);
        Some(best - now)
    }

    /// CSV with header `after_experience,task_0,...`; missing cells are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["after_experience".to_string()];
        header.extend((0..self.n_tasks).map(|i| format!("task_{i}")));
        w.write_record(&header)?;
        for (j, row) in self.rows.iter().enumerate() {
            let mut fields = vec![j.to_string()];
            fields.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forgetting_is_drop_from_best() {
        let mut m = ForgettingMatrix::new(3, 2);
        m.set_row(0, &[0.9, 0.1]).unwrap();
        m.set_row(1, &[0.4, 0.8]).unwrap();
        m.set_row(2, &[0.6, 0.8]).unwrap();
        assert_eq!(m.forgetting(0, 0), Some(0.0));
        assert!((m.forgetting(0, 1).unwrap() - 0.5).abs() < 1e-12);
        assert!((m.forgetting(0, 2).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(m.forgetting(1, 2), Some(0.0));
    }

    #[test]
    fn rows_fill_in_order() {
        let mut m = ForgettingMatrix::new(2, 1);
        m.set_row(1, &[1.0]).unwrap();
        assert!(m.set_row(0, &[1.0]).is_err());
        assert!(m.set_row(1, &[1.0]).is_err());
        assert_eq!(m.forgetting(0, 0), None);
        let mut m = ForgettingMatrix::new(1, 2);
        assert!(m.set_row(0, &[1.0]).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut m = ForgettingMatrix::new(2, 2);
        m.set_row(1, &[0.5, -1.0]).unwrap();
        let mut out = Vec::new();
        m.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "after_experience,task_0,task_1\n0,,\n1,0.5,-1\n"
        );
    }
}
