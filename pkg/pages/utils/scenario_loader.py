import glob
import logging
import os
import tempfile

import streamlit as st

from absf.cli import configure_logging
from absf.errors import AbsfError
from absf.harness import load_scenario

ROOT_DIR = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
SCENARIO_DIR = os.path.join(ROOT_DIR, "scenarios")

configure_logging()
logger = logging.getLogger(__name__)


def bundled_scenarios():
    return {os.path.splitext(os.path.basename(p))[0]: p for p in sorted(glob.glob(os.path.join(SCENARIO_DIR, "*.toml")))}


def sidebar_scenario(default="homogeneous"):
    """Scenario picked in the sidebar: a bundled file or an uploaded one, with a seed override."""
    st.sidebar.header("Scenario")
    bundled = bundled_scenarios()
    if not bundled:
        st.error(f"No scenario files found in {SCENARIO_DIR}.")
        st.stop()
    names = list(bundled)
    choice = st.sidebar.selectbox("Bundled scenario", names, index=names.index(default) if default in names else 0)
    uploaded = st.sidebar.file_uploader("...or upload a scenario", type=["toml", "json"])

    try:
        if uploaded is not None:
            suffix = os.path.splitext(uploaded.name)[1]
            with tempfile.NamedTemporaryFile("wb", suffix=suffix, delete=False) as f:
                f.write(uploaded.getvalue())
            scenario = load_scenario(f.name)
        else:
            scenario = load_scenario(bundled[choice])
    except AbsfError as e:
        st.error(f"Could not load scenario: {e}")
        st.stop()

    seed = st.sidebar.number_input("Seed", value=int(scenario.seeds[0]), step=1)
    return scenario.model_copy(update={"seeds": [int(seed)]})


def output_dir(scenario, tool):
    path = os.path.join(tempfile.gettempdir(), "absf-lab", scenario.name, tool)
    os.makedirs(path, exist_ok=True)
    return path


def csv_download(df, file_name, label=None):
    st.download_button(
        label=label or f"💾 Download {file_name}",
        data=df.to_csv(index=False).encode("utf-8"),
        file_name=file_name,
        mime="text/csv",
    )
