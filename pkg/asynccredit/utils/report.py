'''Result files: metrics CSV, credit-trace CSV, run manifest, ablation summary, verification report
'''

import json
import math

import numpy as np
import pandas as pd

from .vsp import PHASE_NAMES

METRICS_VERSION = '# asynccredit metrics v1'
METRICS_COLUMNS = ['step', 'episodes', 'loss', 'epsilon', 'test_mean_return', 'test_return_std',
                   'q_min_offset', 'test_success_rate']

class MetricsWriter(object):
    '''Append-only CSV whose first line names the schema version'''
    def __init__(self, path):
        self.path = path
        with open(path, 'w') as file:
            file.write(METRICS_VERSION + '\n')
            file.write(','.join(METRICS_COLUMNS) + '\n')

    def append(self, row):
        frame = pd.DataFrame([[row.get(col, np.nan) for col in METRICS_COLUMNS]], columns=METRICS_COLUMNS)
        frame.to_csv(self.path, mode='a', header=False, index=False)

def read_metrics(path):
    return(pd.read_csv(path, comment='#'))

def trace_columns(n_agents):
    return(['episode', 'step', 'slot_id', 'phase', 'q_value'] + ['pair_w_%d' % j for j in range(n_agents)])

def trace_frame(traces, n_agents):
    '''Long format: one row per (episode, step, slot). Pair-weight cells are filled only on
    deciding real slots, column j holding the weight of the pair with unmasked proxy n+j.'''
    rows = []
    for episode, records in traces:
        for record in records:
            for slot, phase in enumerate(record['phases']):
                q_value = record['q_values'][slot]
                row = [episode, record['step'], slot, PHASE_NAMES[phase],
                       None if q_value is None or math.isnan(q_value) else q_value]
                pairs = [None] * n_agents
                if slot < n_agents:
                    pairs = [None if math.isnan(w) else w for w in record['pair_weights'][slot]]
                rows.append(row + pairs)
    return(pd.DataFrame(rows, columns=trace_columns(n_agents)))

def write_trace(path, traces, n_agents):
    frame = trace_frame(traces, n_agents)
    frame.to_csv(path, index=False)
    return(frame)

def write_json(path, content):
    with open(path, 'w') as file:
        json.dump(content, file, indent=2, sort_keys=True, default=_json_default)

def read_json(path):
    with open(path, 'r') as file:
        return(json.load(file))

def _json_default(value):
    if isinstance(value, (np.integer,)):
        return(int(value))
    if isinstance(value, (np.floating,)):
        return(float(value))
    if isinstance(value, np.ndarray):
        return(value.tolist())
    return(str(value))

def verify_report_json(results):
    return(json.dumps({'passed': all(r['passed'] for r in results), 'tests': results},
                      indent=2, sort_keys=True, default=_json_default))

def ablation_summary(rows):
    '''rows: dicts with axis value, seed and final evaluation; returns per-value mean/std table'''
    frame = pd.DataFrame(rows)
    summary = frame.groupby('value', sort=False)['final_mean_return'].agg(['mean', 'std', 'count'])
    summary['success_rate'] = frame.groupby('value', sort=False)['final_success_rate'].mean()
    return(frame, summary.reset_index())

