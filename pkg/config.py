import os

basedir = os.path.abspath(os.path.dirname(__file__))


def _env_flag(name, default):
    value = os.environ.get(name)
    if value is None:
        return default
    return value.strip().lower() not in ('0', 'false', 'no', 'off', '')


class Config:
    THREADS = int(os.environ.get('NGO_SIM_THREADS') or os.cpu_count() or 1)
    OUTPUT_DIR = os.environ.get('NGO_SIM_OUT') or os.path.join(os.getcwd(), 'out')
    LOG_LEVEL = os.environ.get('NGO_SIM_LOG_LEVEL', 'INFO').upper()

    # runners refuse schedules whose offset is too small for their step-size rule; False only warns
    STRICT_SCHEDULE = _env_flag('NGO_SIM_STRICT_SCHEDULE', True)

    CONFIG_DIR = os.path.join(basedir, 'configs')
