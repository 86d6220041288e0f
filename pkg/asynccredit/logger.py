import datetime
import sys
from os.path import join

LABEL_WIDTH = 40

def get_version():
    '''Installed package version; falls back to the source tree version'''
    try:
        import pkg_resources  # part of setuptools to retrieve version
        return(pkg_resources.require('asynccredit')[0].version)
    except Exception:
        from . import __version__
        return(__version__)

def format_duration(seconds):
    return(str(datetime.timedelta(seconds=round(seconds, 3))))

def format_row(label, value, width=LABEL_WIDTH):
    return('%-*s: %s' % (width, label, value))

def config_text(config, indent='  '):
    '''One "section:" block per config section, keys aligned under it'''
    lines = []
    for section, values in config.__dict__.items():
        lines.append('%s%s:' % (indent, section))
        lines += [indent * 2 + format_row(key, values[key], width=24) for key in values]
    return('\n'.join(lines) + '\n')

class RunLogger(object):
    '''Step / result logging on stderr for one run; results and durations also end up in performance.txt
    '''
    def __init__(self, name, config, log_config=True):
        self.name = name
        self.verbose = config.output['verbose']
        self.durations = [] # (label, seconds)
        self.results = []   # (label, value)
        if log_config:
            self.log_config(config)

    def _print(self, text):
        if self.verbose: print(text, file = sys.stderr)

    def log_config(self, config):
        self._print('[%s] configuration:\n%s' % (self.name, config_text(config)))

    def log_step_start(self, message, sub=False):
        '''== message == for a step, -- message -- for a sub-step'''
        decorator = '--' if sub else '=='
        self._print('%s %s %s' % (decorator, message, decorator))

    def log_step_end(self, label, dur_second, sub=False):
        decorator = '--' if sub else '=='
        self.durations.append((label, dur_second))
        self._print('%s %s done in %s %s\n' % (decorator, label, format_duration(dur_second), decorator))

    def log_message(self, message):
        self._print(message)

    def log_result(self, label, content):
        self.results.append((label, content))
        self._print('* %s' % format_row(label, content))

    def log_test_point(self, row):
        '''One line per evaluation during training; not kept for performance.txt'''
        self._print('  t_env %-8d episodes %-6d return %8.3f +- %-7.3f success %.2f' %
                    (row['step'], row['episodes'], row['test_mean_return'], row['test_return_std'],
                     row['test_success_rate']))

    def write_performance_log(self, dir_name, config, file_name='performance.txt'):
        '''performance.txt: version and run name, configuration, results, durations with their total'''
        sections = [format_row('asynccredit version', get_version()),
                    format_row('run', self.name),
                    '\n--Configuration parameters--\n' + config_text(config),
                    '--Results--']
        sections += [format_row(label, value) for label, value in self.results]
        sections.append('\n--Durations--')
        sections += [format_row(label, format_duration(seconds)) for label, seconds in self.durations]
        sections.append(format_row('Total execution time', format_duration(sum(d for _, d in self.durations))))
        with open(join(dir_name, file_name), 'w') as file:
            file.write('\n'.join(sections) + '\n')
