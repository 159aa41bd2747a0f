import os
import sys

import pandas as pd
import streamlit as st

current_dir = os.path.dirname(os.path.abspath(__file__))
parent_dir = os.path.dirname(current_dir)
sys.path.append(parent_dir)

from absf.errors import AbsfError
from absf.harness import optimize
from pages.utils.scenario_loader import csv_download, output_dir, sidebar_scenario

st.set_page_config(
    page_title="ABS Optimizer",
    page_icon="🎯",
    layout="centered",
)

st.title("🎯 ABS Optimizer")

scenario = sidebar_scenario()

policy = st.sidebar.selectbox(
    "Policy",
    options=["asymptotic-pf", "dynamic-pf", "max-throughput", "fixed-ratio", "legacy"],
    help="dynamic-pf here is a single decision with an empty history.",
)
if policy == "fixed-ratio":
    ratio = st.sidebar.select_slider("Application ratio", options=["2/8", "3/8", "4/8", "5/8", "6/8", "7/8"], value="4/8")
    policy = f"fixed-ratio:{ratio}"

if 'optimized' not in st.session_state:
    st.session_state.optimized = None

if st.sidebar.button("🎯 Optimize"):
    with st.spinner(f"Solving {policy}..."):
        try:
            st.session_state.optimized = optimize(scenario, output_dir(scenario, "optimize"), policy)
        except AbsfError as e:
            st.error(f"Optimization failed: {e}")
            st.stop()

if st.session_state.optimized is not None:
    probabilities, pattern = st.session_state.optimized
    probs = probabilities.to_frame()
    support = probs[probs["prob"] > 1e-6].sort_values("prob", ascending=False)
    st.subheader(f"States in support ({len(support)})")
    st.dataframe(support, use_container_width=True)
    csv_download(probs, "probabilities.csv")

    st.subheader("ABS pattern")
    activity = pd.DataFrame(pattern.activity().astype(int), columns=[f"bs{b}" for b in range(pattern.n_stations)])
    st.caption("Share of subframes each station transmits in")
    st.bar_chart(activity.mean())
    csv_download(activity, "pattern.csv")
