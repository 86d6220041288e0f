from os.path import join, isdir, isfile
import os
import sys

import shutil

OUTDIR_ENV = 'ASYNC_CREDIT_OUTDIR'

def create_dir(dir_name, verbose=True):
    '''Create a directory (and missing parents); an existing directory is left as is
    '''
    if isdir(dir_name): return
    if verbose: print('Creating a new directory %s' % dir_name, file = sys.stderr)
    os.makedirs(dir_name)

def reset_dir(dir_name, verbose=True):
    '''Remove any existing directory with the same name and create a new one
    '''
    if isdir(dir_name):
        if verbose: print('Directory %s exists; deleting...' % dir_name, file = sys.stderr)
        shutil.rmtree(dir_name)
    create_dir(dir_name, verbose)

def output_root(config):
    '''ASYNC_CREDIT_OUTDIR wins over output.dir'''
    return(os.environ.get(OUTDIR_ENV) or config.output['dir'])

def make_run_id(config):
    if config.output.get('run_id'):
        return(str(config.output['run_id']))
    mixer = config.mixer['family']
    if mixer == 'mvd':
        mixer = 'mvd%d-%s' % (config.mixer['order'], config.mixer['head_mode'])
    return('%s-%s-%s-s%d' % (config.env['name'], mixer, config.wrapper['mode'], config.train['seed']))

def run_layout(run_dir):
    '''Paths of a run directory: manifest.json, metrics.csv, checkpoints/, traces/'''
    return({'run_dir': run_dir,
            'manifest': join(run_dir, 'manifest.json'),
            'metrics': join(run_dir, 'metrics.csv'),
            'checkpoints': join(run_dir, 'checkpoints'),
            'traces': join(run_dir, 'traces')})

def fresh_run_dir(root, run_id):
    '''First of <run_id>, <run_id>-2, <run_id>-3, ... that does not hold a finished or running run'''
    run_dir, k = join(root, run_id), 1
    while isfile(join(run_dir, 'manifest.json')):
        k += 1
        run_dir = join(root, '%s-%d' % (run_id, k))
    return(run_dir)

def prepare_run_dir(config, verbose=True):
    '''Create the run directory; an earlier run with the same id is kept and the new run gets a suffix'''
    run_id = make_run_id(config)
    root = output_root(config)
    run_dir = fresh_run_dir(root, run_id)
    if verbose and run_dir != join(root, run_id):
        print('Run %s already exists; writing to %s' % (run_id, run_dir), file = sys.stderr)
    reset_dir(run_dir, verbose)
    layout = run_layout(run_dir)
    create_dir(layout['checkpoints'], verbose)
    create_dir(layout['traces'], verbose)
    return(layout)
