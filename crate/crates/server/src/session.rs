//! Per-session state: base table, current view, fitted models and the
//! revision counter used for staleness checks.

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use projscope_core::data::{DataTable, TableView};
use projscope_core::dimred::{Embedding, ProjectionModel};
use projscope_core::filter;
use projscope_core::CancelToken;

use crate::error::ApiError;
use crate::ops::ClusterResult;

/// A model together with the view revision it was fitted on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fitted<T> {
    pub revision: u64,
    pub value: T,
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub table: Arc<DataTable>,
    pub view: TableView,
    /// Increments on every view mutation.
    pub revision: u64,
    pub filter_expr: Option<String>,
    pub keyword: Option<String>,
    pub projection: Option<Fitted<Embedding>>,
    pub clustering: Option<Fitted<ClusterResult>>,
}

/// The lock-free cancel token lives outside the mutex so DELETE can
/// interrupt a fit that currently holds the session guard.
#[derive(Debug)]
pub struct SessionHandle {
    pub cancel: CancelToken,
    pub inner: tokio::sync::Mutex<Session>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub revision: u64,
    pub n_rows: usize,
    pub n_selected: usize,
    pub features: Vec<String>,
    pub filter: Option<String>,
    pub keyword: Option<String>,
    pub projection_revision: Option<u64>,
    pub clustering_revision: Option<u64>,
}

type RowOrder<'a> = Box<dyn Fn(&usize, &usize) -> Ordering + 'a>;

fn non_empty(s: Option<String>) -> Option<String> {
    s.filter(|v| !v.trim().is_empty())
}

impl Session {
    pub fn new(id: String, table: DataTable) -> Self {
        let table = Arc::new(table);
        Self {
            id,
            view: TableView::full(table.clone()),
            table,
            revision: 0,
            filter_expr: None,
            keyword: None,
            projection: None,
            clustering: None,
        }
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.id.clone(),
            revision: self.revision,
            n_rows: self.table.n_rows(),
            n_selected: self.view.n_rows(),
            features: self.view.feature_names(),
            filter: self.filter_expr.clone(),
            keyword: self.keyword.clone(),
            projection_revision: self.projection.as_ref().map(|f| f.revision),
            clustering_revision: self.clustering.as_ref().map(|f| f.revision),
        }
    }

    /// Replaces the row filter. Both parts empty clears it. Returns the
    /// number of matching rows; the session is unchanged on error.
    pub fn set_filter(&mut self, expr: Option<String>, keyword: Option<String>) -> Result<usize, ApiError> {
        let expr = non_empty(expr);
        let keyword = non_empty(keyword);
        let mut mask = vec![true; self.table.n_rows()];
        if let Some(text) = &expr {
            let parsed = filter::parse(text).map_err(projscope_core::Error::from)?;
            mask = self.table.apply_filter(&parsed)?;
        }
        if let Some(q) = &keyword {
            for (m, hit) in mask.iter_mut().zip(self.table.keyword_filter(q)) {
                *m &= hit;
            }
        }
        self.view = self.view.clone().with_mask(mask)?;
        self.filter_expr = expr;
        self.keyword = keyword;
        self.revision += 1;
        Ok(self.view.n_rows())
    }

    pub fn set_features(&mut self, names: &[String]) -> Result<(), ApiError> {
        if names.is_empty() {
            return Err(ApiError::Invalid("at least one feature must be selected".into()));
        }
        self.view = self.view.clone().with_features(names)?;
        self.revision += 1;
        Ok(())
    }

    /// The linear projection model, if one was fitted at the current revision.
    pub fn current_model(&self) -> Result<&ProjectionModel, ApiError> {
        let fitted = self.projection.as_ref().ok_or(ApiError::NoModel("projection"))?;
        if fitted.revision < self.revision {
            return Err(ApiError::Stale {
                model: "projection",
                model_revision: fitted.revision,
                view_revision: self.revision,
            });
        }
        fitted.value.model.as_ref().ok_or(ApiError::NoModel("projection"))
    }

    pub fn current_clustering(&self) -> Result<&ClusterResult, ApiError> {
        let fitted = self.clustering.as_ref().ok_or(ApiError::NoModel("clustering"))?;
        if fitted.revision < self.revision {
            return Err(ApiError::Stale {
                model: "clustering",
                model_revision: fitted.revision,
                view_revision: self.revision,
            });
        }
        Ok(&fitted.value)
    }

    /// Labels aligned with the selected rows, only when not stale.
    pub fn current_labels(&self) -> Option<&[usize]> {
        self.current_clustering().ok().map(|c| c.model.labels.as_slice())
    }

    pub fn table_page(&self, q: &TableQuery) -> Result<TablePage, ApiError> {
        let table = &self.table;
        let features = self.view.feature_names();
        let positions = self.view.feature_indices().to_vec();
        let rows = self.view.selected_rows();
        let labels = self.current_labels();
        let categorical: Vec<String> = table.categorical().iter().map(|c| c.name.clone()).collect();

        let mut order: Vec<usize> = (0..rows.len()).collect();
        if let Some(key) = &q.sort_by {
            let rows = &rows;
            let cmp: RowOrder = if key == "id" || Some(key.as_str()) == table.id_column() {
                Box::new(|&a, &b| table.row_ids()[rows[a]].cmp(&table.row_ids()[rows[b]]))
            } else if key == "label" {
                let labels = labels.ok_or(ApiError::NoModel("clustering"))?;
                Box::new(move |&a, &b| labels[a].cmp(&labels[b]))
            } else if let Some(j) = table.feature_index(key) {
                Box::new(move |&a, &b| table.value(rows[a], j).total_cmp(&table.value(rows[b], j)))
            } else if let Some(c) = table.categorical().iter().find(|c| &c.name == key) {
                Box::new(move |&a, &b| c.values[rows[a]].cmp(&c.values[rows[b]]))
            } else {
                return Err(projscope_core::Error::UnknownNames(vec![key.clone()]).into());
            };
            match q.dir.unwrap_or_default() {
                SortDir::Asc => order.sort_by(|a, b| cmp(a, b)),
                SortDir::Desc => order.sort_by(|a, b| cmp(b, a)),
            }
        }

        let offset = q.offset.unwrap_or(0);
        let limit = q.limit.unwrap_or(100).min(10_000);
        let page = order
            .iter()
            .skip(offset)
            .take(limit)
            .map(|&p| {
                let r = rows[p];
                TableRow {
                    id: table.row_ids()[r].clone(),
                    values: positions.iter().map(|&j| table.value(r, j)).collect(),
                    categorical: table.categorical().iter().map(|c| c.values[r].clone()).collect(),
                    label: labels.map(|l| l[p]),
                }
            })
            .collect();
        Ok(TablePage {
            revision: self.revision,
            total: rows.len(),
            offset,
            limit,
            features,
            categorical,
            rows: page,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortDir {
    #[default]
    Asc,
    Desc,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct TableQuery {
    pub offset: Option<usize>,
    pub limit: Option<usize>,
    pub sort_by: Option<String>,
    pub dir: Option<SortDir>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub id: String,
    /// Aligned with [`TablePage::features`].
    pub values: Vec<f64>,
    /// Aligned with [`TablePage::categorical`].
    pub categorical: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TablePage {
    pub revision: u64,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub features: Vec<String>,
    pub categorical: Vec<String>,
    pub rows: Vec<TableRow>,
}

/// On-demand JSON snapshot of a session's state (not the raw table).
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot<'a> {
    pub session: SessionSummary,
    pub table: projscope_core::data::TableMetadata,
    pub projection: Option<&'a Fitted<Embedding>>,
    pub clustering: Option<&'a Fitted<ClusterResult>>,
}
