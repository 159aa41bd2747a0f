import os
import sys

import streamlit as st

# Add the parent directory to sys.path
current_dir = os.path.dirname(os.path.abspath(__file__))
parent_dir = os.path.dirname(current_dir)
sys.path.append(parent_dir)

from absf.errors import AbsfError
from absf.harness import analyze
from pages.utils.scenario_loader import csv_download, output_dir, sidebar_scenario

st.set_page_config(
    page_title="State Analysis",
    page_icon="📶",
    layout="centered",
)

st.title("📶 ABS State Analysis")

st.markdown("""
Closed-form throughput of every ABS state for one placement of the groups, the per-cell
average group throughput with every station active, and the gain of mmWave D2D relaying
(all groups of the chosen size vs single users at the same positions).
""")

scenario = sidebar_scenario()
relay_size = st.sidebar.slider("Relay group size", min_value=2, max_value=10, value=5)

if 'analysis' not in st.session_state:
    st.session_state.analysis = None

if st.sidebar.button("📶 Analyze states"):
    with st.spinner("Evaluating every ABS state..."):
        try:
            st.session_state.analysis = analyze(scenario, output_dir(scenario, "analyze"), relay_size=relay_size)
        except AbsfError as e:
            st.error(f"Analysis failed: {e}")
            st.stop()

result = st.session_state.analysis
if result is not None:
    gain = float(result["relay_gain"]["gain"].iloc[0])
    st.metric("Relay gain (all-active state)", f"{(gain - 1) * 100:+.1f}%")

    states = result["states"].sort_values("system_throughput_bps", ascending=False)
    st.subheader("Per-state system throughput")
    st.dataframe(states.head(20), use_container_width=True)
    csv_download(states, "states.csv")

    st.subheader("Per-cell average group throughput")
    cells = result["cells"]
    st.bar_chart(cells.set_index("station_id")["mean_group_throughput_bps"])
    csv_download(cells, "cells.csv")
