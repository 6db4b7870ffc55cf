"""Episode evaluation: coverage curves, mean AUC, final coverage, and
Chamfer-distance reconstruction accuracy.

Mean AUC is the arithmetic mean of the coverage curve over an episode's
captured views (the reset view included), i.e. the normalized area under the
discrete coverage-step curve; for monotone curves it never exceeds the final
coverage ratio.
"""

import csv
import io
import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy.spatial import cKDTree

from .env import EpisodeState
from .mapping import PointCloud, write_ply_points

CSV_HEADER = ["scene", "policy", "views", "auc", "final_cr", "chamfer_cm", "reason"]


@dataclass
class CoverageReport:
    scene_id: str
    policy_id: str
    views: int  # views actually captured after the reset view
    curve: list[float]  # CR_0 .. CR_views, percent
    mean_auc: float
    final_cr: float
    chamfer_cm: float
    reason: str
    budget: int | None = None  # configured view budget (not in the CSV)

    def csv_row(self) -> list:
        return [self.scene_id, self.policy_id, self.views,
                repr(self.mean_auc), repr(self.final_cr),
                repr(self.chamfer_cm), self.reason]


def mean_auc(curve) -> float:
    """Arithmetic mean of a coverage curve (percent)."""
    curve = np.asarray(curve, dtype=float)
    if curve.size == 0:
        raise ValueError("empty coverage curve")
    return float(curve.mean())


def chamfer(scanned: PointCloud, gt: PointCloud) -> float:
    """Symmetric Chamfer distance in centimeters.

    0.5 * (mean nearest-neighbor distance scanned->gt + gt->scanned), exact
    nearest neighbors via a KD-tree.
    """
    a = scanned.points if isinstance(scanned, PointCloud) else np.asarray(scanned)
    b = gt.points if isinstance(gt, PointCloud) else np.asarray(gt)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer requires two non-empty clouds")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return 100.0 * 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def scanned_cloud(episode: EpisodeState) -> PointCloud:
    """Union of the episode's back-projected points, one representative point
    per voxel cell (kept in first-seen order)."""
    if len(episode.cloud_points) == 0:
        raise ValueError("episode has no integrated views")
    return PointCloud(episode.cloud_points.copy())


def report_from_episode(episode: EpisodeState, policy_id: str,
                        budget: int | None = None) -> CoverageReport:
    cloud = scanned_cloud(episode)
    gt_cloud = PointCloud(episode.scene.ground_truth.surface_points)
    reason = episode.status.value if episode.status.value != "running" else "exhausted"
    return CoverageReport(
        scene_id=episode.scene.scene_id,
        policy_id=policy_id,
        views=episode.step_count,
        curve=list(episode.coverage),
        mean_auc=mean_auc(episode.coverage),
        final_cr=float(episode.coverage[-1]),
        chamfer_cm=chamfer(cloud, gt_cloud),
        reason=reason,
        budget=budget,
    )


@dataclass
class PolicySummary:
    policy_id: str
    n_episodes: int
    views: int
    mean_auc: float
    mean_final_cr: float
    mean_chamfer_cm: float


def aggregate(reports: list[CoverageReport]) -> list[PolicySummary]:
    """Unweighted per-policy means across scenes/seeds.

    Reports carrying a configured budget must all share it (budgets are
    fixed per evaluation, like the per-dataset view counts); reports
    reloaded from CSV carry no budget and skip the check.
    """
    if not reports:
        raise ValueError("no reports to aggregate")
    budgets = {r.budget for r in reports if r.budget is not None}
    if len(budgets) > 1:
        raise ValueError(f"mixed view budgets in aggregation: {sorted(budgets)}")
    by_policy: dict[str, list[CoverageReport]] = {}
    for r in reports:
        by_policy.setdefault(r.policy_id, []).append(r)
    out = []
    for policy_id in sorted(by_policy):
        rs = by_policy[policy_id]
        out.append(PolicySummary(
            policy_id=policy_id,
            n_episodes=len(rs),
            views=max(r.views for r in rs),
            mean_auc=float(np.mean([r.mean_auc for r in rs])),
            mean_final_cr=float(np.mean([r.final_cr for r in rs])),
            mean_chamfer_cm=float(np.mean([r.chamfer_cm for r in rs])),
        ))
    return out


def write_reports_csv(reports: list[CoverageReport], path) -> None:
    """One row per (scene, policy) episode, fixed header, full-precision
    floats (repr) so parsing the file back reproduces the values exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in reports:
            w.writerow(r.csv_row())


def read_reports_csv(path) -> list[CoverageReport]:
    """Rebuild reports (without curves) from an emitted CSV."""
    out = []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != CSV_HEADER:
        raise ValueError(f"unexpected CSV header: {rows[0]}")
    for row in rows[1:]:
        out.append(CoverageReport(
            scene_id=row[0], policy_id=row[1], views=int(row[2]), curve=[],
            mean_auc=float(row[3]), final_cr=float(row[4]),
            chamfer_cm=float(row[5]), reason=row[6]))
    return out


def write_summary_csv(summaries: list[PolicySummary], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "episodes", "views", "mean_auc", "mean_final_cr",
                    "mean_chamfer_cm"])
        for s in summaries:
            w.writerow([s.policy_id, s.n_episodes, s.views, repr(s.mean_auc),
                        repr(s.mean_final_cr), repr(s.mean_chamfer_cm)])


def write_summary_json(summaries: list[PolicySummary], path) -> None:
    with open(path, "w") as fh:
        json.dump({"policies": [asdict(s) for s in summaries]}, fh, indent=2)
        fh.write("\n")


def export_scanned_ply(episode: EpisodeState, path) -> None:
    write_ply_points(scanned_cloud(episode).points, path)
