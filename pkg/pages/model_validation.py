import os
import sys

import streamlit as st

current_dir = os.path.dirname(os.path.abspath(__file__))
parent_dir = os.path.dirname(current_dir)
sys.path.append(parent_dir)

from absf.errors import AbsfError
from absf.harness import validate
from pages.utils.scenario_loader import csv_download, output_dir, sidebar_scenario

st.set_page_config(
    page_title="Model Validation",
    page_icon="✅",
    layout="centered",
)

st.title("✅ Model vs Simulation")

st.markdown("""
Groups are frozen in place and each ABS state is enforced for every subframe. The closed-form
throughput is compared with the simulated mean and its batch-means confidence interval, both
for single users and for relay groups. `analytical_reference_bps` uses the squared-Gaussian noise
model, `analytical_bps` the simulator's own noise model.
""")

scenario = sidebar_scenario(default="validation")
subframes = st.sidebar.number_input("Subframes per state", min_value=1000, value=int(scenario.validation.subframes), step=1000)

if 'validation' not in st.session_state:
    st.session_state.validation = None

if st.sidebar.button("✅ Validate"):
    spec = scenario.validation.model_copy(update={"subframes": int(subframes)})
    with st.spinner("Simulating every selected state..."):
        try:
            st.session_state.validation = validate(scenario.model_copy(update={"validation": spec}), output_dir(scenario, "validate"))
        except AbsfError as e:
            st.error(f"Validation failed: {e}")
            st.stop()

df = st.session_state.validation
if df is not None:
    inside = int(df["inside_ci"].sum())
    st.metric("Analytical values inside the simulated CI", f"{inside} / {len(df)}")
    st.dataframe(df, use_container_width=True)
    csv_download(df, "validation.csv")
