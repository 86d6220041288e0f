'''Flat checkpoint container:
  8 bytes magic | uint64 little-endian header length | JSON header | float64 little-endian data
The header lists every array as {name, shape, offset, count}; offsets count bytes from the data start.
'''

import json
import struct
from collections import OrderedDict
from os.path import isfile

import numpy as np

from ..exceptions import CheckpointError

MAGIC = b'ACKPT001'

def save_checkpoint(path, arrays, meta=None):
    entries, chunks, offset = [], [], 0
    for name, value in arrays.items():
        data = np.ascontiguousarray(value, dtype='<f8')
        entries.append({'name': name, 'shape': list(data.shape), 'offset': offset, 'count': int(data.size)})
        chunks.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps({'arrays': entries, 'meta': meta or {}}, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as file:
        file.write(MAGIC)
        file.write(struct.pack('<Q', len(header)))
        file.write(header)
        for chunk in chunks:
            file.write(chunk)

def load_checkpoint(path):
    '''Return (OrderedDict name -> ndarray, meta dict)'''
    if not isfile(path):
        raise CheckpointError('checkpoint not found: %s' % path)
    with open(path, 'rb') as file:
        content = file.read()
    if content[:8] != MAGIC or len(content) < 16:
        raise CheckpointError('%s is not an asynccredit checkpoint' % path)
    header_len = struct.unpack('<Q', content[8:16])[0]
    try:
        header = json.loads(content[16:16 + header_len].decode('utf-8'))
    except ValueError as err:
        raise CheckpointError('corrupt checkpoint header in %s: %s' % (path, err))
    data_start = 16 + header_len
    arrays = OrderedDict()
    for entry in header['arrays']:
        start = data_start + entry['offset']
        if start + 8 * entry['count'] > len(content):
            raise CheckpointError('checkpoint %s is truncated at %s' % (path, entry['name']))
        values = np.frombuffer(content, dtype='<f8', count=entry['count'], offset=start)
        arrays[entry['name']] = values.astype(np.float64).reshape(entry['shape'])
    return(arrays, header.get('meta', {}))
