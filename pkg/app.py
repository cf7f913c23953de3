"""
Restoration Anomaly Detector - Streamlit Interface

Browse evaluated runs (results, per-defect AUROC, score tables) and score
uploaded images against a trained checkpoint.

Run with: streamlit run app.py
"""

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd
import streamlit as st

from pipeline import Detector
from pipeline.trainer import CHECKPOINT_NAME
from synthesis.sources import IMAGE_SUFFIXES

# Page configuration
st.set_page_config(
    page_title="Restoration Anomaly Detector",
    page_icon="🔍",
    layout="wide",
    initial_sidebar_state="expanded"
)

# Custom CSS
st.markdown("""
<style>
    .verdict-normal {
        background-color: #28a745;
        color: white;
        padding: 20px;
        border-radius: 10px;
        text-align: center;
        font-size: 2em;
        font-weight: bold;
    }
    .verdict-anomalous {
        background-color: #dc3545;
        color: white;
        padding: 20px;
        border-radius: 10px;
        text-align: center;
        font-size: 2em;
        font-weight: bold;
    }
    .metric-card {
        background-color: #f8f9fa;
        padding: 15px;
        border-radius: 8px;
        text-align: center;
    }
</style>
""", unsafe_allow_html=True)


def find_runs(root: Path) -> list[Path]:
    """Directories under root holding a results.json or a checkpoint."""
    if not root.exists():
        return []
    found = {p.parent for p in root.rglob("results.json")} | {p.parent for p in root.rglob(CHECKPOINT_NAME)}
    return sorted(found)


def read_json(path: Path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


@st.cache_resource
def load_detector(checkpoint: str) -> Detector:
    return Detector.from_checkpoint(checkpoint, device="cpu")


def render_verdict(score: float, threshold: float | None):
    """Render a colored verdict badge (score >= threshold => anomalous)."""
    if threshold is None:
        return
    verdict = "anomalous" if score >= threshold else "normal"
    st.markdown(f'<div class="verdict-{verdict}">{verdict.upper()}</div>', unsafe_allow_html=True)


def render_metrics(results: dict):
    """Render the headline metrics of a results document."""
    col1, col2, col3, col4 = st.columns(4)

    def pct(value):
        return "n/a" if value is None else f"{value * 100:.1f}"

    with col1:
        st.metric("Image AUROC", pct(results.get("image_auroc")))
    with col2:
        st.metric("Pixel AUROC", pct(results.get("pixel_auroc")))
    with col3:
        st.metric("F1", pct(results.get("f1")))
    with col4:
        st.metric("ACC", pct(results.get("acc")))


def render_run(run_dir: Path):
    """Render the artifacts of one run directory."""
    results_path = run_dir / "results.json"
    if not results_path.exists():
        st.info("No results.json in this run yet. Evaluate it with `python main.py eval`.")
        return

    results = read_json(results_path)
    st.caption(
        f"Category **{results.get('category')}** | variant **{results.get('variant') or 'custom'}** | "
        f"seed **{results.get('seed')}** | {results.get('num_test_images')} test images"
    )
    render_metrics(results)
    st.write(f"**Threshold:** {results.get('threshold'):.6g} ({results.get('decision_rule')})")

    tab1, tab2, tab3, tab4 = st.tabs(["🧩 Per Defect", "📈 Scores", "🔥 Heatmaps", "⚙️ Complexity"])

    with tab1:
        per_defect = results.get("per_defect_image_auroc", {})
        if per_defect:
            st.dataframe(
                pd.DataFrame(
                    [{"Defect": k, "Image AUROC": v} for k, v in sorted(per_defect.items())]
                ),
                use_container_width=True,
            )
        else:
            st.info("No per-defect breakdown available.")

    with tab2:
        scores_path = run_dir / "scores.csv"
        if scores_path.exists():
            scores = pd.read_csv(scores_path)
            st.dataframe(scores, use_container_width=True)
            labelled = scores.dropna(subset=["label"])
            if not labelled.empty:
                fig, ax = plt.subplots(figsize=(6, 3))
                for label, group in labelled.groupby("label"):
                    ax.hist(group["score"], bins=20, alpha=0.6, label="anomalous" if label else "normal")
                ax.axvline(results.get("threshold"), color="black", linestyle="--")
                ax.legend()
                st.pyplot(fig)
                plt.close(fig)
        else:
            st.info("No scores.csv found.")

    with tab3:
        heatmaps = sorted(run_dir.rglob("*_heatmap.png"))
        if heatmaps:
            columns = st.columns(4)
            for i, path in enumerate(heatmaps[:32]):
                with columns[i % 4]:
                    st.image(str(path), caption=path.stem.removesuffix("_heatmap"))
        else:
            st.info("No heatmaps yet. Run `python main.py infer` to write some.")

    with tab4:
        complexity_path = run_dir / "complexity.json"
        if complexity_path.exists():
            st.json(read_json(complexity_path))
        else:
            st.info("No complexity.json found.")


def render_scoring(run_dir: Path, threshold: float | None):
    """Score an uploaded image against the run's checkpoint."""
    checkpoint = run_dir / CHECKPOINT_NAME
    if not checkpoint.exists():
        st.info("This run has no checkpoint to score with.")
        return

    uploaded_file = st.file_uploader(
        "Choose an image",
        type=[s.lstrip(".") for s in IMAGE_SUFFIXES],
        help="The image is resized to the run's input size before scoring"
    )
    if uploaded_file is None:
        return

    if st.button("🚀 Score Image", type="primary", use_container_width=True):
        with st.spinner("Scoring..."):
            try:
                result = load_detector(str(checkpoint)).score_bytes(uploaded_file.getvalue())
            except Exception as e:
                st.error(f"Error scoring image: {e}")
                return

        score = float(result.anomaly.image_score[0])
        col1, col2, col3 = st.columns([1, 1, 1])
        with col1:
            st.image(uploaded_file.getvalue(), caption=uploaded_file.name)
        with col2:
            fig, ax = plt.subplots()
            ax.imshow(result.anomaly.pixel_scores[0].cpu().numpy(), cmap="jet")
            ax.axis("off")
            st.pyplot(fig)
            plt.close(fig)
        with col3:
            st.metric("Image score", f"{score:.6g}")
            render_verdict(score, threshold)


def main():
    """Main Streamlit application."""

    # Header
    st.title("🔍 Restoration Anomaly Detector")
    st.markdown("*Unsupervised anomaly detection by restoring synthesized feature anomalies*")

    # Sidebar
    with st.sidebar:
        st.header("⚙️ Settings")
        runs_root = Path(st.text_input("Runs directory", value="runs"))
        runs = find_runs(runs_root)

        if runs:
            selected = st.selectbox("Run", [str(r) for r in runs])
        else:
            selected = None
            st.info(f"No runs found under {runs_root}/")

        st.divider()

        st.header("ℹ️ About")
        st.markdown("""
        Each run directory may contain:
        - `results.json`: AUROC, F1, ACC and threshold
        - `scores.csv`: per-image scores
        - `*_heatmap.png`: pixel anomaly maps
        - `checkpoint.pt`: trained weights
        """)

    if selected is None:
        st.info("👈 Train and evaluate a run first: `python main.py train` then `python main.py eval`")
        return

    run_dir = Path(selected)
    st.header("📊 Run Results")
    render_run(run_dir)

    st.divider()
    st.header("📤 Score an Image")
    results_path = run_dir / "results.json"
    threshold = read_json(results_path).get("threshold") if results_path.exists() else None
    render_scoring(run_dir, threshold)


if __name__ == "__main__":
    main()
